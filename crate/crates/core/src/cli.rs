//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codegraph::GraphView;
use crate::embed::Backend;
use crate::gnn::GnnType;
use crate::pipeline::{self, PipelineConfig, PipelineError};
use crate::synth::{generate, SynthConfig};

#[derive(Parser, Debug)]
#[command(name = "stmtvd", version, about = "Statement-level vulnerability detection over dependence graphs")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding the stage artifacts.
    #[arg(long, global = true, default_value = "run")]
    pub run_dir: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long, global = true, value_enum)]
    pub gnn: Option<GnnArg>,
    #[arg(long, global = true, value_enum)]
    pub graph: Option<GraphArg>,
    #[arg(long = "func-branch", global = true, value_enum)]
    pub func_branch: Option<Switch>,
    /// Statements listed per function (and k of the ranked metrics).
    #[arg(long = "top-k", global = true)]
    pub top_k: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Read, clean and split a dataset.
    Ingest {
        #[arg(long)]
        dataset: PathBuf,
        /// Hold this project out as the test set.
        #[arg(long)]
        project: Option<String>,
    },
    /// Build statement graphs.
    Graph {
        /// Directory of exported graphs named `<id>.json`.
        #[arg(long)]
        export_dir: Option<PathBuf>,
    },
    /// Derive statement labels from the fix diffs.
    Label,
    /// Train a model and fix its decision threshold.
    Train,
    /// Score the test split and write report.json.
    Evaluate,
    /// Hold out one project and run every stage.
    Crossproject {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        project: String,
    },
    /// Annotate the lines of one function.
    Predict {
        /// Defaults to `<run-dir>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write the JSON record here.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// C source holding a single function.
        file: PathBuf,
    },
    /// Write a generated corpus with planted vulnerable statements.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        vulnerable: usize,
        #[arg(long, default_value_t = 100)]
        safe: usize,
        /// Comma-separated project names assigned round-robin.
        #[arg(long, default_value = "synthetic")]
        projects: String,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum BackendArg {
    Pretrained,
    Trainable,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum GnnArg {
    Gat,
    Gcn,
    None,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum GraphArg {
    Pdg,
    Cdg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Switch {
    On,
    Off,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

/// Configuration file (if any) with command-line overrides applied.
pub fn resolve_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(b) = common.backend {
        cfg.backend = match b {
            BackendArg::Pretrained => Backend::PretrainedTransformer,
            BackendArg::Trainable => Backend::TrainableAverage,
        };
    }
    if let Some(g) = common.gnn {
        cfg.gnn_type = match g {
            GnnArg::Gat => GnnType::Gat,
            GnnArg::Gcn => GnnType::Gcn,
            GnnArg::None => GnnType::None,
        };
    }
    if let Some(g) = common.graph {
        cfg.graph_view = match g {
            GraphArg::Pdg => GraphView::Pdg,
            GraphArg::Cdg => GraphView::Cdg,
        };
    }
    if let Some(f) = common.func_branch {
        cfg.use_function_branch = matches!(f, Switch::On);
    }
    if let Some(k) = common.top_k {
        cfg.top_k = k;
    }
    Ok(cfg)
}

fn predict(
    run_dir: &Path,
    cfg: &PipelineConfig,
    checkpoint: Option<PathBuf>,
    json: Option<PathBuf>,
    format: Format,
    file: &Path,
) -> Result<String, PipelineError> {
    let code = std::fs::read_to_string(file)
        .map_err(|e| PipelineError::Validation(format!("cannot read {}: {e}", file.display())))?;
    let ck_path = checkpoint.unwrap_or_else(|| run_dir.join(pipeline::CHECKPOINT));
    let (ck, featurizer) = pipeline::load_predictor(&ck_path)?;
    let id = file.file_stem().map_or_else(|| "function".to_string(), |s| s.to_string_lossy().into_owned());
    let rec = pipeline::predict_function(&ck, &featurizer, &id, &code, cfg.top_k)?;
    if let Some(p) = json {
        pipeline::write_json(&p, &rec)?;
    }
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(&rec).expect("serializable") + "\n",
        Format::Text => pipeline::render_prediction(&rec, &code),
    })
}

fn dispatch(cli: Cli) -> Result<String, PipelineError> {
    let cfg = resolve_config(&cli.common)?;
    let run_dir = cli.common.run_dir.as_path();
    match cli.command {
        Command::Ingest { dataset, project } => {
            let split = pipeline::run_ingest(&dataset, run_dir, &cfg, project.as_deref())?;
            Ok(format!(
                "split: {} train / {} validation / {} test\n",
                split.train.len(),
                split.validation.len(),
                split.test.len()
            ))
        }
        Command::Graph { export_dir } => {
            Ok(format!("{} graphs written\n", pipeline::run_graph(run_dir, export_dir.as_deref())?))
        }
        Command::Label => Ok(format!("{} label records written\n", pipeline::run_label(run_dir, &cfg)?)),
        Command::Train => {
            let m = pipeline::run_train(run_dir, &cfg)?;
            Ok(format!(
                "best epoch {} (validation loss {:.5}), threshold {}\n",
                m.best_epoch,
                m.best_val_loss(),
                m.threshold
            ))
        }
        Command::Evaluate => Ok(summary(&pipeline::run_evaluate(run_dir, &cfg)?)),
        Command::Crossproject { dataset, project } => {
            Ok(summary(&pipeline::run_crossproject(&dataset, run_dir, &cfg, &project)?))
        }
        Command::Predict { checkpoint, json, format, file } => predict(run_dir, &cfg, checkpoint, json, format, &file),
        Command::Synth { out, vulnerable, safe, projects } => {
            let projects: Vec<String> = projects.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect();
            if projects.is_empty() {
                return Err(PipelineError::Validation("--projects is empty".into()));
            }
            let cfg = SynthConfig { n_vulnerable: vulnerable, n_safe: safe, seed: cfg.seed, projects, ..Default::default() };
            let rows: Vec<_> = generate(&cfg).into_iter().map(|s| s.sample.to_row()).collect();
            pipeline::write_jsonl(&out, &rows)?;
            Ok(format!("{} functions written to {}\n", rows.len(), out.display()))
        }
    }
}

fn summary(r: &crate::metrics::EvalReport) -> String {
    format!(
        "f1 {:.4} prec {:.4} rec {:.4} rocauc {:.4} prauc {:.4} | map{k} {:.4} ndcg{k} {:.4} n{k} {:.4} mfr {:.3}\n",
        r.f1,
        r.prec,
        r.rec,
        r.rocauc,
        r.prauc,
        r.map5,
        r.ndcg5,
        r.n5,
        r.mfr,
        k = r.k
    )
}

/// Parse `args`, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
