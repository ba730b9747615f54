#ifndef STMTVD_H
#define STMTVD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StmtvdStatus {
  STMTVD_STATUS_OK = 0,
  STMTVD_STATUS_NULL_POINTER = 1,
  STMTVD_STATUS_INVALID_UTF8 = 2,
  STMTVD_STATUS_INVALID_INPUT = 3,
  STMTVD_STATUS_IO = 4,
  STMTVD_STATUS_PANIC = 5,
} StmtvdStatus;

/**
 * Which side of an added line counts as dependent when labeling.
 */
typedef enum StmtvdDirection {
  STMTVD_DIRECTION_OUT = 0,
  STMTVD_DIRECTION_IN = 1,
  STMTVD_DIRECTION_BOTH = 2,
} StmtvdDirection;

/**
 * A loaded checkpoint with its featurizer. Opaque to C.
 */
typedef struct StmtvdModel StmtvdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into this library from the same thread.
 */
const char *stmtvd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *stmtvd_version(void);

/**
 * Release a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void stmtvd_string_free(char *s);

/**
 * Load a checkpoint written by `stmtvd train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum StmtvdStatus stmtvd_model_load(const char *path, struct StmtvdModel **out);

/**
 * Free a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from `stmtvd_model_load` and not have been freed.
 */
void stmtvd_model_free(struct StmtvdModel *model);

/**
 * Decision threshold stored with the model.
 *
 * # Safety
 * `model` must be a live model; `out` must be writable.
 */
enum StmtvdStatus stmtvd_model_threshold(const struct StmtvdModel *model, double *out);

/**
 * Score every statement of one C function. Writes the prediction record as
 * JSON to `*out_json`.
 *
 * # Safety
 * `model` must be a live model, the strings NUL-terminated and `out_json`
 * writable.
 */
enum StmtvdStatus stmtvd_predict(const struct StmtvdModel *model,
                                 const char *function_id,
                                 const char *code,
                                 size_t top_k,
                                 char **out_json);

/**
 * Statement graph of one function as JSON.
 *
 * # Safety
 * Strings must be NUL-terminated; `out_json` writable.
 */
enum StmtvdStatus stmtvd_build_graph(const char *function_id, const char *code, char **out_json);

/**
 * Label one dataset row (the JSON object format read by `stmtvd ingest`).
 * Writes the label record as JSON.
 *
 * # Safety
 * `row_json` must be NUL-terminated; `out_json` writable.
 */
enum StmtvdStatus stmtvd_label_sample(const char *row_json,
                                      enum StmtvdDirection direction,
                                      char **out_json);

/**
 * Blank out comments, keeping every line and column in place.
 *
 * # Safety
 * `code` must be NUL-terminated; `out` writable.
 */
enum StmtvdStatus stmtvd_strip_comments(const char *code, char **out);

/**
 * Two-sided signed-rank test on `n` pairs.
 *
 * # Safety
 * `a` and `b` must point to `n` doubles; outputs must be writable.
 */
enum StmtvdStatus stmtvd_wilcoxon(const double *a,
                                  const double *b,
                                  size_t n,
                                  double *statistic,
                                  double *p_value);

/**
 * Area under the ROC curve. `labels` holds 0 or 1.
 *
 * # Safety
 * `scores` and `labels` must point to `n` elements; `out` writable.
 */
enum StmtvdStatus stmtvd_roc_auc(const double *scores,
                                 const uint8_t *labels,
                                 size_t n,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STMTVD_H */
