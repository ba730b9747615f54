static enum hrtimer_restart posix_timer_fn(struct hrtimer *timer)
{
	struct k_itimer *timr = container_of(timer, struct k_itimer, it.real.timer);
	enum hrtimer_restart ret = HRTIMER_NORESTART;
	int si_private = 0;

	/* Only periodic timers carry a requeue counter. */
	if (timr->it_interval != 0)
		si_private = ++timr->it_requeue_pending;

	if (posix_timer_event(timr, si_private)) {
		/*
		 * The signal was not queued because it is ignored.
		 * Rearm the timer with a coarse interval so that a
		 * later unblock of the signal finds it armed, and
		 * account the skipped periods as overruns. The
		 * return value of the forward call is a u64.
		 */
		if (timr->it_interval != 0) {
			ktime_t kj = NSEC_PER_SEC / HZ;
			ktime_t now = ktime_add(hrtimer_cb_get_time(timer), kj);
			timr->it_overrun += (unsigned int) hrtimer_forward(&timr->it.real.timer, now, timr->it_interval);
			ret = HRTIMER_RESTART;
		}
	}
	return ret;
}
