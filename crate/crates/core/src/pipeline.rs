//! Stage orchestration over a run directory.
//!
//! | stage | reads | writes |
//! |---|---|---|
//! | ingest | dataset JSONL | `samples.jsonl`, `cleaning_report.json`, `split.json` |
//! | graph | `samples.jsonl` | `graphs.jsonl` |
//! | label | `samples.jsonl` | `labels.jsonl` |
//! | train | the above | `config.json`, `checkpoint.bin`, `history.jsonl` |
//! | evaluate | the above | `report.json`, `predictions.jsonl` |

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::codegraph::{build_graph_builtin, import_graph, GraphExport, GraphView, StatementGraph};
use crate::corpus::{self, CorpusError, FunctionSample};
use crate::embed::{
    encode_pretrained, token_features, Backend, EmbedError, EmbeddingCache, EncoderClient, EncoderConfig, RetryPolicy, Vocab,
};
use crate::gnn::{
    forward, load_checkpoint, save_checkpoint, Activation, Checkpoint, GatingMode, GnnType, ModelConfig, ModelError,
    ModelInput,
};
use crate::labeler::{label_sample, DepDirection, LabelRecord, LabelSet};
use crate::metrics::{evaluate, rank_order, EvalOptions, EvalReport, MetricsError, N5Population};
use crate::trainer::{predict_all, random_search, train, Example, SearchSpace, TrainConfig, TrainError};

pub const SAMPLES: &str = "samples.jsonl";
pub const CLEANING_REPORT: &str = "cleaning_report.json";
pub const SPLIT: &str = "split.json";
pub const GRAPHS: &str = "graphs.jsonl";
pub const LABELS: &str = "labels.jsonl";
pub const CONFIG: &str = "config.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const HISTORY: &str = "history.jsonl";
pub const REPORT: &str = "report.json";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const SEARCH: &str = "search.json";

/// Environment variable naming the embedding cache directory.
pub const CACHE_ENV: &str = "STMTVD_CACHE";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error("missing upstream artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl PipelineError {
    /// 1 for problems with the inputs, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) | Self::MissingArtifact(_) | Self::Corpus(_) => 1,
            Self::Train(TrainError::Config(_) | TrainError::NoPositives | TrainError::EmptyTraining) => 1,
            Self::Model(ModelError::Config(_)) | Self::Embed(EmbedError::Config(_)) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

/// Flat configuration; every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dep_direction: DepDirection,
    /// Skip functions whose graph has no dependency edges in the chosen view.
    pub drop_no_edge: bool,
    pub undersample: bool,
    pub vocab_min_count: usize,
    pub vocab_max_size: usize,

    pub backend: Backend,
    pub dim: usize,
    pub max_tokens_function: usize,
    pub max_tokens_statement: usize,
    pub endpoint: Option<String>,
    pub cache_dir: Option<PathBuf>,

    pub gnn_type: GnnType,
    pub graph_view: GraphView,
    pub use_function_branch: bool,
    pub hidden_dim: usize,
    pub gnn_layers: usize,
    pub heads: usize,
    pub mlp_layers: usize,
    pub dropout: f64,
    pub gating_mode: GatingMode,
    pub activation: Activation,
    pub symmetric: bool,
    pub leaky_slope: f64,
    pub func_loss_weight: f64,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip: f64,
    /// Random-search trials before the final run; 0 trains the given config.
    pub search_budget: usize,

    pub top_k: usize,
    pub n5_population: N5Population,
    pub per_function_prauc: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let e = EncoderConfig::default();
        PipelineConfig {
            seed: 0,
            dep_direction: DepDirection::Both,
            drop_no_edge: true,
            undersample: true,
            vocab_min_count: 1,
            vocab_max_size: 50_000,
            backend: e.backend,
            dim: e.dim,
            max_tokens_function: e.max_tokens_function,
            max_tokens_statement: e.max_tokens_statement,
            endpoint: None,
            cache_dir: None,
            gnn_type: m.gnn_type,
            graph_view: m.graph_view,
            use_function_branch: m.use_function_branch,
            hidden_dim: m.hidden_dim,
            gnn_layers: m.gnn_layers,
            heads: m.heads,
            mlp_layers: m.mlp_layers,
            dropout: m.dropout,
            gating_mode: m.gating_mode,
            activation: m.activation,
            symmetric: m.symmetric,
            leaky_slope: m.leaky_slope,
            func_loss_weight: m.func_loss_weight,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            grad_clip: t.grad_clip,
            search_budget: 0,
            top_k: 5,
            n5_population: N5Population::Vulnerable,
            per_function_prauc: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => PipelineError::Validation(format!("config file {} not found", path.display())),
            _ => io_err(path)(e),
        })?;
        Self::from_toml(&text)
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            backend: self.backend,
            dim: self.dim,
            max_tokens_function: self.max_tokens_function,
            max_tokens_statement: self.max_tokens_statement,
            cache_dir: self.cache_dir.clone().or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from)),
            endpoint: self.endpoint.clone(),
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            gnn_type: self.gnn_type,
            graph_view: self.graph_view,
            use_function_branch: self.use_function_branch,
            input_dim: self.dim,
            hidden_dim: self.hidden_dim,
            gnn_layers: self.gnn_layers,
            heads: self.heads,
            mlp_layers: self.mlp_layers,
            dropout: self.dropout,
            gating_mode: self.gating_mode,
            activation: self.activation,
            symmetric: self.symmetric,
            leaky_slope: self.leaky_slope,
            func_loss_weight: self.func_loss_weight,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            model: self.model(),
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            grad_clip: self.grad_clip,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions { k: self.top_k, n5_population: self.n5_population, per_function_prauc: self.per_function_prauc }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.encoder().validate()?;
        self.train().validate().map_err(|e| PipelineError::Validation(e.to_string()))?;
        if self.top_k == 0 {
            return Err(PipelineError::Validation("top_k must be positive".into()));
        }
        if self.backend == Backend::PretrainedTransformer && self.endpoint.is_none() {
            return Err(PipelineError::Validation("the pretrained backend needs `endpoint`".into()));
        }
        Ok(())
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => PipelineError::MissingArtifact(path.to_path_buf()),
        _ => io_err(path)(e),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| PipelineError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, &r).expect("serializable");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => PipelineError::MissingArtifact(path.to_path_buf()),
        _ => io_err(path)(e),
    })?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut buf = serde_json::to_vec_pretty(value).expect("serializable");
    buf.push(b'\n');
    write_atomic(path, &buf)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Read, clean and split a dataset. With `project`, that project becomes
/// the test set.
pub fn run_ingest(dataset: &Path, run_dir: &Path, cfg: &PipelineConfig, project: Option<&str>) -> Result<corpus::DatasetSplit, PipelineError> {
    if !dataset.exists() {
        return Err(PipelineError::Validation(format!("dataset {} not found", dataset.display())));
    }
    let raw = corpus::ingest(dataset)?;
    let (samples, report) = corpus::clean(&raw);
    let split = match project {
        Some(p) => corpus::make_cross_project_split(&samples, p, cfg.seed)?,
        None => corpus::make_random_split(&samples, cfg.seed)?,
    };
    let split = if cfg.undersample { corpus::undersample_train(&split, &samples, cfg.seed)? } else { split };
    write_jsonl(&run_dir.join(SAMPLES), samples.iter().map(FunctionSample::to_row))?;
    write_json(&run_dir.join(CLEANING_REPORT), &report)?;
    write_json(&run_dir.join(SPLIT), &split)?;
    log::info!(
        "ingested {} rows, kept {}; split {}/{}/{}",
        report.input,
        report.kept,
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(split)
}

fn load_samples(run_dir: &Path) -> Result<Vec<FunctionSample>, PipelineError> {
    let path = run_dir.join(SAMPLES);
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path));
    }
    Ok(corpus::ingest(&path)?)
}

/// Before-version graph of `sample` over its comment-stripped text.
pub fn sample_graph(sample: &FunctionSample, export_dir: Option<&Path>) -> Result<StatementGraph, PipelineError> {
    let code = corpus::strip_comments(&sample.code_before);
    if let Some(dir) = export_dir {
        let path = dir.join(format!("{}.json", sample.id));
        if path.exists() {
            let export: GraphExport = read_json(&path)?;
            return import_graph(&sample.id, &export, &code)
                .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())));
        }
    }
    Ok(build_graph_builtin(&sample.id, &code))
}

/// Build statement graphs; exported graphs named `<id>.json` in
/// `export_dir` take precedence over the built-in analyzer.
pub fn run_graph(run_dir: &Path, export_dir: Option<&Path>) -> Result<usize, PipelineError> {
    let samples = load_samples(run_dir)?;
    let graphs = samples.iter().map(|s| sample_graph(s, export_dir)).collect::<Result<Vec<_>, _>>()?;
    write_jsonl(&run_dir.join(GRAPHS), &graphs)?;
    Ok(graphs.len())
}

pub fn run_label(run_dir: &Path, cfg: &PipelineConfig) -> Result<usize, PipelineError> {
    let samples = load_samples(run_dir)?;
    let records: Vec<LabelRecord> = samples.iter().map(|s| label_sample(s, cfg.dep_direction).labels.to_record()).collect();
    write_jsonl(&run_dir.join(LABELS), &records)?;
    Ok(records.len())
}

/// How statement and function features are produced.
pub enum Featurizer {
    Trainable { vocab: Vocab, encoder: EncoderConfig },
    Pretrained { client: EncoderClient, cache: Option<EmbeddingCache>, encoder: EncoderConfig },
}

impl Featurizer {
    /// Trainable featurizer with a vocabulary over `train_texts`, or a
    /// connected encoder client.
    pub fn new<'a>(cfg: &PipelineConfig, train_texts: impl IntoIterator<Item = &'a str>) -> Result<Self, PipelineError> {
        let encoder = cfg.encoder();
        Ok(match cfg.backend {
            Backend::TrainableAverage => {
                Featurizer::Trainable { vocab: Vocab::build(train_texts, cfg.vocab_min_count, cfg.vocab_max_size), encoder }
            }
            Backend::PretrainedTransformer => Self::pretrained(encoder)?,
        })
    }

    fn pretrained(encoder: EncoderConfig) -> Result<Self, PipelineError> {
        let endpoint = encoder.endpoint.clone().ok_or_else(|| PipelineError::Validation("missing encoder endpoint".into()))?;
        let client = EncoderClient::connect(&endpoint, encoder.dim, RetryPolicy::default())?;
        let cache = match &encoder.cache_dir {
            Some(d) => Some(EmbeddingCache::new(d).map_err(io_err(d))?),
            None => None,
        };
        Ok(Featurizer::Pretrained { client, cache, encoder })
    }

    pub fn vocab_rows(&self) -> Option<usize> {
        match self {
            Featurizer::Trainable { vocab, .. } => Some(vocab.len()),
            Featurizer::Pretrained { .. } => None,
        }
    }

    pub fn encoder(&self) -> &EncoderConfig {
        match self {
            Featurizer::Trainable { encoder, .. } | Featurizer::Pretrained { encoder, .. } => encoder,
        }
    }

    pub fn features(&self, code: &str, graph: &StatementGraph) -> Result<crate::gnn::Features, PipelineError> {
        Ok(match self {
            Featurizer::Trainable { vocab, encoder } => token_features(code, graph, vocab, encoder)?,
            Featurizer::Pretrained { client, cache, encoder } => {
                encode_pretrained(code, graph, encoder, client, cache.as_ref())?.into_features()
            }
        })
    }

    /// Checkpoint metadata from which [`Featurizer::from_meta`] rebuilds this featurizer.
    pub fn meta(&self) -> serde_json::Value {
        let mut m = serde_json::json!({ "encoder": self.encoder() });
        if let Featurizer::Trainable { vocab, .. } = self {
            m["vocab"] = serde_json::to_value(vocab).expect("serializable");
        }
        m
    }

    /// Rebuild from checkpoint metadata.
    pub fn from_meta(meta: &serde_json::Value) -> Result<Self, PipelineError> {
        let bad = |m: &str| PipelineError::Validation(format!("checkpoint metadata: {m}"));
        let mut encoder: EncoderConfig =
            serde_json::from_value(meta.get("encoder").cloned().ok_or_else(|| bad("no encoder"))?).map_err(|e| bad(&e.to_string()))?;
        match encoder.backend {
            Backend::TrainableAverage => {
                let vocab: Vocab = serde_json::from_value(meta.get("vocab").cloned().ok_or_else(|| bad("no vocabulary"))?)
                    .map_err(|e| bad(&e.to_string()))?;
                Ok(Featurizer::Trainable { vocab, encoder })
            }
            Backend::PretrainedTransformer => {
                if let Some(dir) = std::env::var_os(CACHE_ENV) {
                    encoder.cache_dir = Some(PathBuf::from(dir));
                }
                Self::pretrained(encoder)
            }
        }
    }
}

/// Model-ready example for one labelled function.
pub fn make_example(
    sample: &FunctionSample,
    graph: &StatementGraph,
    labels: &LabelSet,
    featurizer: &Featurizer,
    model: &ModelConfig,
) -> Result<Example, PipelineError> {
    let code = corpus::strip_comments(&sample.code_before);
    Ok(Example {
        id: sample.id.clone(),
        lines: graph.lines(),
        types: graph.nodes.iter().map(|n| n.stmt_type).collect(),
        labels: graph.nodes.iter().map(|n| labels.label_of(n.line_no)).collect(),
        func_label: sample.function_vulnerable,
        input: ModelInput { neighbors: model.neighborhoods(graph), features: featurizer.features(&code, graph)? },
    })
}

/// Everything loaded from a run directory for training or evaluation.
pub struct Prepared {
    pub samples: BTreeMap<String, FunctionSample>,
    pub graphs: HashMap<String, StatementGraph>,
    pub labels: HashMap<String, LabelRecord>,
    pub split: corpus::DatasetSplit,
}

pub fn load_prepared(run_dir: &Path) -> Result<Prepared, PipelineError> {
    let samples = load_samples(run_dir)?;
    let split: corpus::DatasetSplit = read_json(&run_dir.join(SPLIT))?;
    let graphs: Vec<StatementGraph> = read_jsonl(&run_dir.join(GRAPHS))?;
    let labels: Vec<LabelRecord> = read_jsonl(&run_dir.join(LABELS))?;
    Ok(Prepared {
        samples: samples.into_iter().map(|s| (s.id.clone(), s)).collect(),
        graphs: graphs.into_iter().map(|g| (g.function_id.clone(), g)).collect(),
        labels: labels.into_iter().map(|l| (l.id.clone(), l)).collect(),
        split,
    })
}

impl Prepared {
    /// Examples for `ids`, skipping edgeless graphs when configured.
    pub fn examples(&self, ids: &[String], featurizer: &Featurizer, cfg: &PipelineConfig) -> Result<Vec<Example>, PipelineError> {
        let model = cfg.model();
        let mut out = Vec::with_capacity(ids.len());
        let mut dropped = 0;
        for id in ids {
            let missing = |what: &str| PipelineError::Validation(format!("{what} for sample {id:?} not found"));
            let sample = self.samples.get(id).ok_or_else(|| missing("sample"))?;
            let graph = self.graphs.get(id).ok_or_else(|| missing("graph"))?;
            let record = self.labels.get(id).ok_or_else(|| missing("labels"))?;
            if graph.is_empty() || (cfg.drop_no_edge && !graph.view(cfg.graph_view).has_dependencies()) {
                dropped += 1;
                continue;
            }
            out.push(make_example(sample, graph, &LabelSet::from_record(record, graph), featurizer, &model)?);
        }
        if dropped > 0 {
            log::info!("skipped {dropped} function(s) without dependency edges");
        }
        Ok(out)
    }

    pub fn train_texts(&self) -> Vec<String> {
        self.split.train.iter().filter_map(|id| self.samples.get(id)).map(|s| corpus::strip_comments(&s.code_before)).collect()
    }
}

/// Train (after an optional random search) and write the run artifacts.
pub fn run_train(run_dir: &Path, cfg: &PipelineConfig) -> Result<crate::trainer::TrainedModel, PipelineError> {
    cfg.validate()?;
    let prep = load_prepared(run_dir)?;
    let texts = prep.train_texts();
    let featurizer = Featurizer::new(cfg, texts.iter().map(String::as_str))?;
    let train_set = prep.examples(&prep.split.train, &featurizer, cfg)?;
    let val = prep.examples(&prep.split.validation, &featurizer, cfg)?;
    let mut tc = cfg.train();
    if let Some(rows) = featurizer.vocab_rows() {
        log::info!("vocabulary of {rows} tokens");
    }
    if cfg.search_budget > 0 {
        let outcome = random_search(&SearchSpace::default(), cfg.search_budget, cfg.seed, &tc, &train_set, &val, featurizer.vocab_rows())?;
        write_json(&run_dir.join(SEARCH), &outcome)?;
        tc = outcome.best;
    }
    let model = train(&tc, &train_set, &val, featurizer.vocab_rows())?;
    let mut effective = cfg.clone();
    effective.hidden_dim = tc.model.hidden_dim;
    effective.heads = tc.model.heads;
    effective.dropout = tc.model.dropout;
    effective.learning_rate = tc.learning_rate;
    effective.batch_size = tc.batch_size;
    write_json(&run_dir.join(CONFIG), &effective)?;
    write_jsonl(&run_dir.join(HISTORY), &model.history)?;
    let meta = serde_json::json!({
        "featurizer": featurizer.meta(),
        "train": tc,
        "best_epoch": model.best_epoch,
    });
    let ck = Checkpoint { config: tc.model.clone(), params: model.params.clone(), threshold: model.threshold, meta };
    save_checkpoint(&run_dir.join(CHECKPOINT), &ck)?;
    Ok(model)
}

fn load_run_checkpoint(path: &Path) -> Result<(Checkpoint, Featurizer), PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let ck = load_checkpoint(path)?;
    let featurizer = Featurizer::from_meta(ck.meta.get("featurizer").unwrap_or(&serde_json::Value::Null))?;
    Ok((ck, featurizer))
}

/// Score the test split with the saved model.
pub fn run_evaluate(run_dir: &Path, cfg: &PipelineConfig) -> Result<EvalReport, PipelineError> {
    let (ck, featurizer) = load_run_checkpoint(&run_dir.join(CHECKPOINT))?;
    let prep = load_prepared(run_dir)?;
    let mut effective = cfg.clone();
    effective.graph_view = ck.config.graph_view;
    let test = prep.examples(&prep.split.test, &featurizer, &effective)?;
    if test.is_empty() {
        return Err(PipelineError::Validation("test split has no usable functions".into()));
    }
    let preds = predict_all(&ck.params, &ck.config, &test)?;
    let report = evaluate(&preds, ck.threshold, cfg.eval_options())?;
    write_jsonl(
        &run_dir.join(PREDICTIONS),
        preds.iter().map(|p| {
            serde_json::json!({
                "id": p.function_id, "lines": p.lines, "labels": p.labels, "scores": p.gated,
                "pre_gate": p.pre_gate, "func_prob": p.func_prob, "gate_open": p.gate_open,
            })
        }),
    )?;
    write_json(&run_dir.join(REPORT), &report)?;
    Ok(report)
}

/// Ingest with a held-out project, then run every later stage.
pub fn run_crossproject(dataset: &Path, run_dir: &Path, cfg: &PipelineConfig, project: &str) -> Result<EvalReport, PipelineError> {
    run_ingest(dataset, run_dir, cfg, Some(project))?;
    run_graph(run_dir, None)?;
    run_label(run_dir, cfg)?;
    run_train(run_dir, cfg)?;
    run_evaluate(run_dir, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinePrediction {
    pub line_no: usize,
    pub code_text: String,
    pub score: f64,
    pub rank: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub function_id: String,
    pub function_vulnerable: bool,
    pub func_prob: f64,
    pub threshold: f64,
    pub lines: Vec<LinePrediction>,
    /// Line numbers of the `k` highest-ranked statements.
    pub top: Vec<usize>,
}

/// Annotate one function with a trained model.
pub fn predict_function(
    ck: &Checkpoint,
    featurizer: &Featurizer,
    function_id: &str,
    code: &str,
    top_k: usize,
) -> Result<PredictionRecord, PipelineError> {
    let stripped = corpus::strip_comments(code);
    let graph = build_graph_builtin(function_id, &stripped);
    if graph.is_empty() {
        return Err(PipelineError::Validation("no statements found in the input".into()));
    }
    if !graph.view(ck.config.graph_view).has_dependencies() {
        log::warn!("{function_id}: no dependency edges; scoring statements without graph context");
    }
    let input = ModelInput { neighbors: ck.config.neighborhoods(&graph), features: featurizer.features(&stripped, &graph)? };
    let (out, _) = forward(&ck.params, &ck.config, &input, None)?;
    let lines = graph.lines();
    let order = rank_order(&out.gated_stmt_prob, &lines);
    let mut rank = vec![0; lines.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    let records = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| LinePrediction {
            line_no: n.line_no,
            code_text: n.code_text.clone(),
            score: out.gated_stmt_prob[i],
            rank: rank[i],
            flagged: out.gate_open && out.gated_stmt_prob[i] >= ck.threshold,
        })
        .collect();
    Ok(PredictionRecord {
        function_id: function_id.to_string(),
        function_vulnerable: out.gate_open,
        func_prob: out.func_prob_vul,
        threshold: ck.threshold,
        lines: records,
        top: order.iter().take(top_k).map(|&i| lines[i]).collect(),
    })
}

pub fn load_predictor(checkpoint: &Path) -> Result<(Checkpoint, Featurizer), PipelineError> {
    load_run_checkpoint(checkpoint)
}

fn bucket(score: f64) -> char {
    match score {
        s if s >= 0.75 => '#',
        s if s >= 0.5 => '+',
        s if s >= 0.25 => ':',
        s if s > 0.0 => '.',
        _ => ' ',
    }
}

/// Plain-text annotation: one row per source line with the score, a shade
/// bucket and a `>>` marker on flagged lines, then the top list.
/// Shortest text that parses back to `s`; exponent form for tiny values.
fn score_text(s: f64) -> String {
    if s != 0.0 && s.abs() < 1e-4 {
        format!("{s:e}")
    } else {
        s.to_string()
    }
}

pub fn render_prediction(rec: &PredictionRecord, code: &str) -> String {
    let by_line: HashMap<usize, &LinePrediction> = rec.lines.iter().map(|l| (l.line_no, l)).collect();
    let mut out = format!(
        "function {} | verdict {} (p={}) | threshold {}\n",
        rec.function_id,
        if rec.function_vulnerable { "vulnerable" } else { "not vulnerable" },
        rec.func_prob,
        rec.threshold
    );
    for (i, text) in corpus::strip_comments(code).lines().enumerate() {
        let n = i + 1;
        match by_line.get(&n) {
            Some(l) => out.push_str(&format!(
                "{:<22} {} {} {n:>4} | {text}\n",
                score_text(l.score),
                bucket(l.score),
                if l.flagged { ">>" } else { "  " }
            )),
            None => out.push_str(&format!("{:<22}      {n:>4} | {text}\n", "-")),
        }
    }
    out.push_str(&format!("top {}:", rec.top.len()));
    for l in &rec.top {
        out.push_str(&format!(" {l}"));
    }
    out.push('\n');
    out
}

/// Line number to score, read back from [`render_prediction`] output.
pub fn parse_rendered_scores(text: &str) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for row in text.lines().skip(1) {
        let Some((left, _)) = row.split_once(" | ") else { continue };
        let fields: Vec<&str> = left.split_whitespace().collect();
        let (Some(score), Some(line)) = (fields.first(), fields.last()) else { continue };
        if let (Ok(s), Ok(l)) = (score.parse::<f64>(), line.parse::<usize>()) {
            out.insert(l, s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_config_parses_and_rejects_unknown_keys() {
        let c = PipelineConfig::from_toml("gnn_type = \"gcn\"\ngraph_view = \"cdg\"\nhidden_dim = 16\nbackend = \"trainable_average\"\n").unwrap();
        assert_eq!(c.gnn_type, GnnType::Gcn);
        assert_eq!(c.graph_view, GraphView::Cdg);
        assert_eq!(c.model().hidden_dim, 16);
        assert!(PipelineConfig::from_toml("hiden_dim = 3").is_err());
        assert_eq!(PipelineConfig::from_toml("backend = \"trainable\"").unwrap().backend, Backend::TrainableAverage);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::MissingArtifact("x".into()).exit_code(), 1);
        assert_eq!(PipelineError::Validation("x".into()).exit_code(), 1);
        assert_eq!(PipelineError::Model(ModelError::NonFiniteGradient("w".into())).exit_code(), 2);
    }

    #[test]
    fn rendering_round_trips_scores() {
        let rec = PredictionRecord {
            function_id: "f".into(),
            function_vulnerable: true,
            func_prob: 0.9,
            threshold: 0.4,
            lines: vec![
                LinePrediction { line_no: 1, code_text: "int f()".into(), score: 0.123456789012345, rank: 2, flagged: false },
                LinePrediction { line_no: 3, code_text: "x = 1;".into(), score: 0.5000000000000001, rank: 1, flagged: true },
                LinePrediction { line_no: 4, code_text: "}".into(), score: 1.026571221853525e-21, rank: 3, flagged: false },
            ],
            top: vec![3, 1, 4],
        };
        let text = render_prediction(&rec, "int f()\n{\n  x = 1;\n}");
        let back = parse_rendered_scores(&text);
        assert_eq!(back, BTreeMap::from([(1, 0.123456789012345), (3, 0.5000000000000001), (4, 1.026571221853525e-21)]));
        assert!(text.contains(">>    3 |"));
        assert!(text.lines().skip(1).all(|l| !l.contains(" | ") || l.find(" | ") == Some(32)));
        assert!(text.ends_with("top 3: 3 1 4\n"));
    }
}
