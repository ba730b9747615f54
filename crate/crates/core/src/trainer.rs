//! Training loop, threshold selection, hyperparameter search and repeated
//! runs. Test data never enters these functions except `repeated_runs`,
//! which fixes the threshold on validation before scoring the test set.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codegraph::StatementType;
use crate::gnn::{forward, loss, loss_and_gradients, ModelConfig, ModelError, ModelInput, ModelParams};
use crate::metrics::{evaluate, Confusion, EvalOptions, EvalReport, FunctionPrediction, MetricsError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("training diverged in epoch {epoch} (non-finite loss or parameters)")]
    Diverged { epoch: usize, last_good: Box<ModelParams> },
    #[error("no positive statements in the validation set; cannot select a threshold")]
    NoPositives,
    #[error("training set is empty")]
    EmptyTraining,
}

/// One function ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub lines: Vec<usize>,
    pub types: Vec<StatementType>,
    pub labels: Vec<u8>,
    pub func_label: bool,
    pub input: ModelInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    /// Functions per optimisation step.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(TrainError::Config("batch_size, max_epochs and patience must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(TrainError::Config("patience must not exceed max_epochs".into()));
        }
        if self.grad_clip.is_nan() || self.grad_clip < 0.0 {
            return Err(TrainError::Config("grad_clip must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub threshold: f64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainedModel {
    pub fn best_val_loss(&self) -> f64 {
        self.history.iter().filter(|r| r.best).map(|r| r.val_loss).next_back().unwrap_or(f64::INFINITY)
    }
}

struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    fn new(params: &ModelParams) -> Self {
        Adam { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let g = grads.tensors();
        let mut m = self.m.tensors_mut();
        let mut v = self.v.tensors_mut();
        for (k, (_, p)) in params.tensors_mut().into_iter().enumerate() {
            let (g, m, v) = (g[k].2, &mut *m[k].1, &mut *v[k].1);
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
            }
        }
    }
}

fn accumulate(acc: &mut ModelParams, g: &ModelParams, scale: f64) {
    let src = g.tensors();
    for (k, (_, dst)) in acc.tensors_mut().into_iter().enumerate() {
        for (d, s) in dst.iter_mut().zip(src[k].2) {
            *d += scale * s;
        }
    }
}

fn clip(g: &mut ModelParams, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = g.tensors().iter().flat_map(|t| t.2.iter()).map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, t) in g.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Mean inference-mode loss over `examples`.
pub fn mean_loss(params: &ModelParams, config: &ModelConfig, examples: &[Example]) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for ex in examples {
        let (out, _) = forward(params, config, &ex.input, None)?;
        total += loss(&out, &ex.labels, ex.func_label, config)?;
    }
    Ok(total / examples.len() as f64)
}

/// Inference-mode prediction record for one function.
pub fn predict(params: &ModelParams, config: &ModelConfig, ex: &Example) -> Result<FunctionPrediction, TrainError> {
    let (out, _) = forward(params, config, &ex.input, None)?;
    Ok(FunctionPrediction {
        function_id: ex.id.clone(),
        lines: ex.lines.clone(),
        types: ex.types.clone(),
        labels: ex.labels.clone(),
        gated: out.gated_stmt_prob,
        pre_gate: out.stmt_prob_vul,
        func_label: ex.func_label,
        func_prob: out.func_prob_vul,
        gate_open: out.gate_open,
    })
}

pub fn predict_all(params: &ModelParams, config: &ModelConfig, examples: &[Example]) -> Result<Vec<FunctionPrediction>, TrainError> {
    examples.iter().map(|e| predict(params, config, e)).collect()
}

/// F1-maximising threshold over the distinct scores plus 0 and 1; a
/// statement is positive when its score is at least the threshold. Ties go
/// to the smallest threshold.
pub fn select_threshold(scores: &[f64], labels: &[u8]) -> Result<f64, TrainError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { what: "labels", expected: scores.len(), got: labels.len() }.into());
    }
    let positives = labels.iter().filter(|l| **l == 1).count() as u64;
    if positives == 0 {
        return Err(TrainError::NoPositives);
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().zip(labels).map(|(s, l)| (*s, *l == 1)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut grid: Vec<f64> = pairs.iter().map(|p| p.0).chain([0.0, 1.0]).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let total = pairs.len() as u64;
    let (mut below, mut below_pos) = (0usize, 0u64);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for t in grid {
        while below < pairs.len() && pairs[below].0 < t {
            below_pos += u64::from(pairs[below].1);
            below += 1;
        }
        let predicted = total - below as u64;
        let tp = positives - below_pos;
        let c = Confusion { tp, fp: predicted - tp, fn_: below_pos, tn: below as u64 - below_pos };
        let f1 = c.f1();
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok(best.1)
}

/// Pooled validation threshold for a model.
pub fn threshold_for(params: &ModelParams, config: &ModelConfig, val: &[Example]) -> Result<f64, TrainError> {
    let preds = predict_all(params, config, val)?;
    let scores: Vec<f64> = preds.iter().flat_map(|p| p.gated.iter().copied()).collect();
    let labels: Vec<u8> = preds.iter().flat_map(|p| p.labels.iter().copied()).collect();
    select_threshold(&scores, &labels)
}

/// Train with early stopping on validation loss, keeping the best
/// parameters, then fix the decision threshold on the validation set.
/// An empty validation set falls back to the training loss.
pub fn train(
    config: &TrainConfig,
    train_set: &[Example],
    val: &[Example],
    vocab_rows: Option<usize>,
) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTraining);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(&config.model, vocab_rows, &mut rng)?;
    let mut adam = Adam::new(&params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc = params.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &train_set[i];
                let step = loss_and_gradients(&params, &config.model, &ex.input, &ex.labels, ex.func_label, Some(&mut rng));
                let (l, g, _) = match step {
                    Ok(v) => v,
                    Err(ModelError::NonFiniteGradient(_)) => {
                        return Err(TrainError::Diverged { epoch, last_good: Box::new(best.1) })
                    }
                    Err(e) => return Err(e.into()),
                };
                if !l.is_finite() {
                    return Err(TrainError::Diverged { epoch, last_good: Box::new(best.1) });
                }
                epoch_loss += l;
                accumulate(&mut acc, &g, scale);
            }
            clip(&mut acc, config.grad_clip);
            adam.step(&mut params, &acc, config.learning_rate);
            if params.first_non_finite().is_some() {
                return Err(TrainError::Diverged { epoch, last_good: Box::new(best.1) });
            }
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = if val.is_empty() { mean_loss(&params, &config.model, train_set)? } else { mean_loss(&params, &config.model, val)? };
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, last_good: Box::new(best.1) });
        }
        let improved = val_loss < best.0;
        if improved {
            best = (val_loss, params.clone(), epoch);
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        history.push(EpochRecord { epoch, train_loss, val_loss, best: improved });
        if epoch - best.2 >= config.patience {
            break;
        }
    }
    let (_, params, best_epoch) = best;
    let threshold_set = if val.is_empty() { train_set } else { val };
    let threshold = threshold_for(&params, &config.model, threshold_set)?;
    Ok(TrainedModel { params, config: config.clone(), threshold, history, best_epoch })
}

/// Hyperparameter ranges sampled by [`random_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    /// Log-uniform bounds.
    pub learning_rate: (f64, f64),
    pub hidden_dim: Vec<usize>,
    /// Uniform bounds.
    pub dropout: (f64, f64),
    pub heads: Vec<usize>,
    pub batch_size: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: (1e-4, 1e-2),
            hidden_dim: vec![64, 128, 256],
            dropout: (0.1, 0.5),
            heads: vec![1, 2, 4],
            batch_size: vec![16, 32, 64],
        }
    }
}

/// `budget` configurations drawn uniformly from `space`, overriding the
/// searched fields of `base`.
pub fn sample_configs(space: &SearchSpace, budget: usize, seed: u64, base: &TrainConfig) -> Result<Vec<TrainConfig>, TrainError> {
    if space.hidden_dim.is_empty() || space.heads.is_empty() || space.batch_size.is_empty() {
        return Err(TrainError::Config("search space has an empty choice list".into()));
    }
    let (lo, hi) = space.learning_rate;
    if !(lo > 0.0 && hi >= lo) || !(space.dropout.0 >= 0.0 && space.dropout.1 >= space.dropout.0 && space.dropout.1 < 1.0) {
        return Err(TrainError::Config("search space bounds are invalid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(budget);
    for _ in 0..budget {
        let mut c = base.clone();
        c.learning_rate = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
        c.model.hidden_dim = *space.hidden_dim.choose(&mut rng).expect("non-empty");
        c.model.dropout = space.dropout.0 + rng.gen::<f64>() * (space.dropout.1 - space.dropout.0);
        c.model.heads = *space.heads.choose(&mut rng).expect("non-empty");
        c.batch_size = *space.batch_size.choose(&mut rng).expect("non-empty");
        out.push(c);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: TrainConfig,
    /// Infinite when the trial failed.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: TrainConfig,
    pub trials: Vec<Trial>,
}

/// Random search with a caller-supplied objective (validation loss).
pub fn random_search_with(
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    base: &TrainConfig,
    mut objective: impl FnMut(&TrainConfig) -> Result<f64, TrainError>,
) -> Result<SearchOutcome, TrainError> {
    if budget == 0 {
        return Err(TrainError::Config("search budget must be at least 1".into()));
    }
    let mut trials = Vec::with_capacity(budget);
    for config in sample_configs(space, budget, seed, base)? {
        let val_loss = match objective(&config) {
            Ok(l) if l.is_finite() => l,
            Ok(_) => f64::INFINITY,
            Err(e) => {
                log::warn!("search trial failed: {e}");
                f64::INFINITY
            }
        };
        trials.push(Trial { config, val_loss });
    }
    let best = trials
        .iter()
        .fold(None::<&Trial>, |b, t| match b {
            Some(b) if b.val_loss <= t.val_loss => Some(b),
            _ => Some(t),
        })
        .expect("budget >= 1")
        .config
        .clone();
    Ok(SearchOutcome { best, trials })
}

/// Random search scoring each sampled configuration by the best validation
/// loss reached in training.
pub fn random_search(
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    base: &TrainConfig,
    train_set: &[Example],
    val: &[Example],
    vocab_rows: Option<usize>,
) -> Result<SearchOutcome, TrainError> {
    random_search_with(space, budget, seed, base, |c| Ok(train(c, train_set, val, vocab_rows)?.best_val_loss()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub threshold: f64,
    pub report: EvalReport,
}

/// Train `n` times with seeds `config.seed + i` and evaluate each on the
/// test set at its own validation threshold.
pub fn repeated_runs(
    config: &TrainConfig,
    n: usize,
    train_set: &[Example],
    val: &[Example],
    test: &[Example],
    vocab_rows: Option<usize>,
    opts: EvalOptions,
) -> Result<Vec<RunResult>, TrainError> {
    if n < 2 {
        return Err(TrainError::Config("repeated runs need n >= 2".into()));
    }
    (0..n as u64)
        .map(|i| {
            let mut c = config.clone();
            c.seed = config.seed.wrapping_add(i);
            let model = train(&c, train_set, val, vocab_rows)?;
            let preds = predict_all(&model.params, &c.model, test)?;
            let report = evaluate(&preds, model.threshold, opts)?;
            Ok(RunResult { seed: c.seed, threshold: model.threshold, report })
        })
        .collect()
}

/// Arithmetic mean of one metric across runs.
pub fn mean_of(runs: &[RunResult], metric: impl Fn(&EvalReport) -> f64) -> f64 {
    runs.iter().map(|r| metric(&r.report)).sum::<f64>() / runs.len() as f64
}
