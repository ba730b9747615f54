use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stmtvd::codegraph::build_graph_builtin;
use stmtvd::corpus::{strip_comments, DatasetSplit};
use stmtvd::embed::{token_features, EncoderConfig, Vocab};
use stmtvd::gnn::{save_checkpoint, Checkpoint, ModelConfig, ModelInput};
use stmtvd::pipeline::{parse_rendered_scores, Featurizer, PredictionRecord};
use stmtvd::trainer::{train, Example, TrainConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stmtvd"))
}

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo.jsonl")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str], run_dir: &Path) -> Output {
    let out = bin().args(args).arg("--run-dir").arg(run_dir).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

const SMALL: &str = "dim = 16\nhidden_dim = 16\nmax_epochs = 8\npatience = 4\nbatch_size = 8\nlearning_rate = 0.01\n";

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p
}

#[test]
fn demo_pipeline_writes_complete_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let rd = tmp.path().join("run");
    let c = cfg.to_str().unwrap();
    assert!(run(&["ingest", "--dataset", demo().to_str().unwrap(), "--config", c], &rd).status.success());
    for stage in ["graph", "label", "train", "evaluate"] {
        assert!(run(&[stage, "--config", c], &rd).status.success(), "{stage}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(rd.join("report.json")).unwrap()).unwrap();
    for key in ["f1", "rec", "prec", "rocauc", "prauc", "n5", "map5", "ndcg5", "mfr", "threshold", "per_type", "first_rank_histogram", "schema_version"] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    for f in ["config.json", "checkpoint.bin", "history.jsonl", "cleaning_report.json", "split.json", "graphs.jsonl", "labels.jsonl"] {
        assert!(rd.join(f).exists(), "{f}");
    }
}

#[test]
fn evaluate_without_checkpoint_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["evaluate"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint.bin"));
    let out = run(&["train"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("samples.jsonl"));
    assert_eq!(bin().args(["train", "--gnn", "transformer"]).output().unwrap().status.code(), Some(1));
    let out = run(&["ingest", "--dataset", "/nonexistent.jsonl"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn crossproject_tests_only_the_target_project() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let rd = tmp.path().join("run");
    let out = run(&["crossproject", "--dataset", demo().to_str().unwrap(), "--project", "qemu", "--config", cfg.to_str().unwrap()], &rd);
    assert!(out.status.success());
    let split: DatasetSplit = serde_json::from_slice(&fs::read(rd.join("split.json")).unwrap()).unwrap();
    assert!(!split.test.is_empty());
    assert!(split.test.iter().all(|id| id.starts_with("qemu-")));
    assert!(split.train.iter().chain(&split.validation).all(|id| !id.starts_with("qemu-")));
    assert!(rd.join("report.json").exists());
}

#[test]
fn stages_are_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let c = cfg.to_str().unwrap();
    let snapshot = |rd: &Path| -> BTreeMap<String, Vec<u8>> {
        fs::read_dir(rd)
            .unwrap()
            .map(|e| e.unwrap())
            .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
            .collect()
    };
    let mut snaps = Vec::new();
    for _ in 0..2 {
        let rd = tmp.path().join("run");
        assert!(run(&["ingest", "--dataset", demo().to_str().unwrap(), "--config", c, "--seed", "7"], &rd).status.success());
        for stage in ["graph", "label", "train", "evaluate"] {
            assert!(run(&[stage, "--config", c, "--seed", "7"], &rd).status.success());
        }
        snaps.push(snapshot(&rd));
    }
    assert_eq!(snaps[0], snaps[1]);
}

/// Checkpoint trained to flag only the deleted line of the timer fixture.
fn overfit_checkpoint(dir: &Path) -> PathBuf {
    let code = strip_comments(&fs::read_to_string(fixture("posix_timer_fn.before.c")).unwrap());
    let graph = build_graph_builtin("posix_timer_fn", &code);
    let vocab = Vocab::build([code.as_str()], 1, 1000);
    let encoder = EncoderConfig { dim: 16, ..Default::default() };
    let model = ModelConfig { input_dim: 16, hidden_dim: 16, dropout: 0.0, ..Default::default() };
    let ex = Example {
        id: "posix_timer_fn".into(),
        lines: graph.lines(),
        types: graph.nodes.iter().map(|n| n.stmt_type).collect(),
        labels: graph.nodes.iter().map(|n| u8::from(n.line_no == 22)).collect(),
        func_label: true,
        input: ModelInput { neighbors: model.neighborhoods(&graph), features: token_features(&code, &graph, &vocab, &encoder).unwrap() },
    };
    let tc = TrainConfig { model: model.clone(), learning_rate: 0.01, batch_size: 1, max_epochs: 200, patience: 200, seed: 1, ..Default::default() };
    let trained = train(&tc, std::slice::from_ref(&ex), std::slice::from_ref(&ex), Some(vocab.len())).unwrap();
    let featurizer = Featurizer::Trainable { vocab, encoder };
    let ck = Checkpoint {
        config: model,
        params: trained.params,
        threshold: trained.threshold,
        meta: serde_json::json!({ "featurizer": featurizer.meta() }),
    };
    let path = dir.join("overfit.bin");
    save_checkpoint(&path, &ck).unwrap();
    path
}

fn predict(ck: &Path, extra: &[&str]) -> (PredictionRecord, String) {
    let tmp = tempfile::tempdir().unwrap();
    let json = tmp.path().join("p.json");
    let out = bin()
        .args(["predict", "--checkpoint", ck.to_str().unwrap(), "--json", json.to_str().unwrap()])
        .args(extra)
        .arg(fixture("posix_timer_fn.before.c"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    (rec, String::from_utf8(out.stdout).unwrap())
}

#[test]
fn predict_ranks_and_renders() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = overfit_checkpoint(tmp.path());
    let (rec, text) = predict(&ck, &[]);
    let line22 = rec.lines.iter().find(|l| l.line_no == 22).unwrap();
    assert_eq!(line22.rank, 1);
    assert!(line22.flagged);
    assert_eq!(rec.top.len(), 5);
    assert_eq!(rec.top[0], 22);
    let ranks: Vec<usize> = {
        let mut r: Vec<usize> = rec.lines.iter().map(|l| l.rank).collect();
        r.sort_unstable();
        r
    };
    assert_eq!(ranks, (1..=rec.lines.len()).collect::<Vec<_>>());
    let parsed = parse_rendered_scores(&text);
    let json_scores: BTreeMap<usize, f64> = rec.lines.iter().map(|l| (l.line_no, l.score)).collect();
    assert_eq!(parsed, json_scores);
    assert!(text.lines().any(|l| l.contains(">>") && l.contains("  22 |")));

    let (three, _) = predict(&ck, &["--top-k", "3"]);
    assert_eq!(three.top.len(), 3);
    let (_, json_text) = predict(&ck, &["--format", "json"]);
    let parsed: PredictionRecord = serde_json::from_str(&json_text).unwrap();
    assert_eq!(parsed, rec);
}

#[test]
fn closed_gate_flags_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let path = overfit_checkpoint(tmp.path());
    let mut ck = stmtvd::gnn::load_checkpoint(&path).unwrap();
    let head = ck.params.func_head.as_mut().unwrap();
    head.w.fill(0.0);
    head.b[0] = 5.0;
    head.b[1] = -5.0;
    save_checkpoint(&path, &ck).unwrap();
    let (rec, text) = predict(&path, &[]);
    assert!(!rec.function_vulnerable);
    assert!(rec.lines.iter().all(|l| !l.flagged && l.score == 0.0));
    assert!(!text.contains(">>"));
}

#[test]
fn edgeless_function_still_predicts() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = overfit_checkpoint(tmp.path());
    let src = tmp.path().join("flat.c");
    fs::write(&src, "void flat(void)\n{\n    puts(\"x\");\n}\n").unwrap();
    let out = bin().args(["predict", "--checkpoint", ck.to_str().unwrap()]).arg(&src).output().unwrap();
    assert!(out.status.success());
}
