//! Dataset ingestion, cleaning and splitting.
//!
//! Input rows are before/after function pairs in JSONL form. Cleaning blanks
//! comments in place (line numbers never move), drops vulnerable samples whose
//! fix is purely cosmetic, and drops samples that were truncated mid-function.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::lexer::{self, Unterminated};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {line}: {message}")]
    Row { line: usize, message: String },
    #[error("duplicate sample id {id:?} (rows {first} and {second})")]
    DuplicateId { id: String, first: usize, second: usize },
    #[error("split needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("training split has no vulnerable functions")]
    NoVulnerableTraining,
    #[error("training split is empty")]
    EmptyTraining,
    #[error("unknown project {project:?}; available: {available:?}")]
    UnknownProject { project: String, available: Vec<String> },
    #[error("project {0:?} covers every sample, nothing left to train on")]
    NothingToTrain(String),
}

/// One function with its pre-fix and post-fix text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSample {
    pub id: String,
    pub project: String,
    pub commit_id: String,
    pub cve_id: Option<String>,
    pub code_before: String,
    pub code_after: String,
    pub function_vulnerable: bool,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl FunctionSample {
    /// Serialize in the dataset row format accepted by [`ingest`].
    pub fn to_row(&self) -> Value {
        let mut obj = serde_json::Map::new();
        for (k, v) in &self.metadata {
            obj.insert(k.clone(), Value::String(v.clone()));
        }
        obj.insert("id".into(), self.id.clone().into());
        obj.insert("project".into(), self.project.clone().into());
        obj.insert("commit_id".into(), self.commit_id.clone().into());
        obj.insert(
            "cve_id".into(),
            self.cve_id.clone().map_or(Value::Null, Value::String),
        );
        obj.insert("func_before".into(), self.code_before.clone().into());
        obj.insert("func_after".into(), self.code_after.clone().into());
        obj.insert("vul".into(), u8::from(self.function_vulnerable).into());
        Value::Object(obj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    Random,
    CrossProject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub split_kind: SplitKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_project: Option<String>,
}

/// Counts per removal reason, written as `cleaning_report.json`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub input: usize,
    pub removed_cosmetic: usize,
    pub removed_truncated: usize,
    pub kept: usize,
}

const KNOWN_KEYS: &[&str] = &["id", "project", "commit_id", "cve_id", "func_before", "func_after", "vul"];

/// Read a dataset JSONL file. Blank lines are skipped.
pub fn ingest(path: &Path) -> Result<Vec<FunctionSample>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_reader(std::io::BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn ingest_reader(reader: impl BufRead) -> Result<Vec<FunctionSample>, CorpusError> {
    let mut samples = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_row(&line).map_err(|message| CorpusError::Row {
            line: line_no,
            message,
        })?;
        if let Some(&first) = seen.get(&sample.id) {
            return Err(CorpusError::DuplicateId {
                id: sample.id,
                first,
                second: line_no,
            });
        }
        seen.insert(sample.id.clone(), line_no);
        samples.push(sample);
    }
    Ok(samples)
}

fn parse_row(line: &str) -> Result<FunctionSample, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("row is not a JSON object")?;
    let string_field = |key: &str| -> Result<String, String> {
        match obj.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) if key == "id" => Ok(n.to_string()),
            Some(_) => Err(format!("field `{key}` must be a string")),
            None => Err(format!("missing field `{key}`")),
        }
    };
    let id = string_field("id")?;
    let project = string_field("project")?;
    let commit_id = string_field("commit_id")?;
    let cve_id = match obj.get("cve_id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err("field `cve_id` must be a string or null".into()),
    };
    let code_before = string_field("func_before")?;
    let code_after = string_field("func_after")?;
    let vul = match obj.get("vul") {
        Some(Value::Number(n)) if n.as_u64() == Some(0) => false,
        Some(Value::Number(n)) if n.as_u64() == Some(1) => true,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err("field `vul` must be 0 or 1".into()),
        None => return Err("missing field `vul`".into()),
    };
    if code_before.trim().is_empty() {
        return Err("field `func_before` is empty".into());
    }
    let metadata = obj
        .iter()
        .filter(|(k, _)| !KNOWN_KEYS.contains(&k.as_str()))
        .map(|(k, v)| {
            let s = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (k.clone(), s)
        })
        .collect();
    Ok(FunctionSample {
        id,
        project,
        commit_id,
        cve_id,
        code_before,
        code_after,
        function_vulnerable: vul,
        metadata,
    })
}

/// Blank out every comment. Newlines inside comments are kept and every other
/// comment character becomes one space, so line and column positions of the
/// remaining code do not move.
pub fn strip_comments(code: &str) -> String {
    let (spans, open) = lexer::comment_spans(code);
    if let Some(Unterminated::BlockComment { line }) = open {
        log::warn!("unterminated block comment starting at line {line}; blanked to end of text");
    }
    if spans.is_empty() {
        return code.to_string();
    }
    let mut out = String::with_capacity(code.len());
    let mut pos = 0;
    for span in spans {
        out.push_str(&code[pos..span.start]);
        out.extend(code[span.clone()].chars().map(|c| if c == '\n' { '\n' } else { ' ' }));
        pos = span.end;
    }
    out.push_str(&code[pos..]);
    out
}

/// True when the two texts lex to the same token sequence.
///
/// Both inputs are expected to be comment-stripped already; comments left in
/// place are ignored by the lexer anyway.
pub fn is_cosmetic_change(before: &str, after: &str) -> bool {
    let a = lexer::lex(before).tokens;
    let b = lexer::lex(after).tokens;
    a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.text == y.text)
}

/// True when bracket nesting is unbalanced at end of text, a closer does not
/// match its opener, or the text ends inside a literal or comment.
pub fn detect_truncation(code: &str) -> bool {
    let lexed = lexer::lex(code);
    if lexed.unterminated.is_some() {
        return true;
    }
    let mut stack = Vec::new();
    for tok in &lexed.tokens {
        match tok.text.as_str() {
            "(" | "[" | "{" => stack.push(tok.text.as_str()),
            ")" | "]" | "}" => {
                let want = match tok.text.as_str() {
                    ")" => "(",
                    "]" => "[",
                    _ => "{",
                };
                if stack.pop() != Some(want) {
                    return true;
                }
            }
            _ => {}
        }
    }
    !stack.is_empty()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemovalReason {
    Cosmetic,
    Truncated,
}

/// Classify a comment-stripped sample: `None` when it should be kept.
pub fn removal_reason(sample: &FunctionSample) -> Option<RemovalReason> {
    if detect_truncation(&sample.code_before)
        || (sample.function_vulnerable && detect_truncation(&sample.code_after))
    {
        return Some(RemovalReason::Truncated);
    }
    if sample.function_vulnerable && is_cosmetic_change(&sample.code_before, &sample.code_after) {
        return Some(RemovalReason::Cosmetic);
    }
    None
}

/// Strip comments from both versions and drop cosmetic-only and truncated
/// samples. Non-vulnerable samples have their after-text reset to the
/// stripped before-text.
pub fn clean(samples: &[FunctionSample]) -> (Vec<FunctionSample>, CleaningReport) {
    let mut report = CleaningReport {
        input: samples.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(samples.len());
    for s in samples {
        let mut s = s.clone();
        s.code_before = strip_comments(&s.code_before);
        s.code_after = if s.function_vulnerable {
            strip_comments(&s.code_after)
        } else {
            s.code_before.clone()
        };
        match removal_reason(&s) {
            Some(RemovalReason::Cosmetic) => report.removed_cosmetic += 1,
            Some(RemovalReason::Truncated) => report.removed_truncated += 1,
            None => kept.push(s),
        }
    }
    report.kept = kept.len();
    (kept, report)
}

fn round_share(n: usize, frac: f64) -> usize {
    (n as f64 * frac).round() as usize
}

/// Split ids into three buckets of the requested sizes, stratified by the
/// function label so validation and test keep the natural class ratio.
fn stratified_buckets(
    samples: &[&FunctionSample],
    sizes: [usize; 2],
    rng: &mut ChaCha8Rng,
) -> [Vec<String>; 3] {
    let n = samples.len();
    let mut vul: Vec<&str> = samples.iter().filter(|s| s.function_vulnerable).map(|s| s.id.as_str()).collect();
    let mut safe: Vec<&str> = samples.iter().filter(|s| !s.function_vulnerable).map(|s| s.id.as_str()).collect();
    vul.shuffle(rng);
    safe.shuffle(rng);
    let mut buckets: [Vec<String>; 3] = Default::default();
    let mut v_used = 0;
    let mut s_used = 0;
    for (b, &size) in sizes.iter().enumerate() {
        let v_left = vul.len() - v_used;
        let s_left = safe.len() - s_used;
        let want_v = if n == 0 { 0 } else { round_share(size, vul.len() as f64 / n as f64) };
        let take_v = want_v.min(v_left).max(size.saturating_sub(s_left)).min(size);
        let take_s = size - take_v;
        buckets[b + 1].extend(vul[v_used..v_used + take_v].iter().map(|s| s.to_string()));
        buckets[b + 1].extend(safe[s_used..s_used + take_s].iter().map(|s| s.to_string()));
        v_used += take_v;
        s_used += take_s;
    }
    buckets[0].extend(vul[v_used..].iter().map(|s| s.to_string()));
    buckets[0].extend(safe[s_used..].iter().map(|s| s.to_string()));
    let order: BTreeMap<&str, usize> = samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    for b in &mut buckets {
        b.sort_by_key(|id| order[id.as_str()]);
    }
    buckets
}

/// 80:10:10 random split, deterministic for a fixed seed.
pub fn make_random_split(samples: &[FunctionSample], seed: u64) -> Result<DatasetSplit, CorpusError> {
    if samples.len() < 10 {
        return Err(CorpusError::TooFewSamples {
            needed: 10,
            got: samples.len(),
        });
    }
    let n = samples.len();
    let held = round_share(n, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs: Vec<&FunctionSample> = samples.iter().collect();
    let [train, validation, test] = stratified_buckets(&refs, [held, held], &mut rng);
    Ok(DatasetSplit {
        train,
        validation,
        test,
        split_kind: SplitKind::Random,
        seed,
        target_project: None,
    })
}

/// Hold out one project as the test set; the rest is split 9:1 into
/// training and validation.
pub fn make_cross_project_split(
    samples: &[FunctionSample],
    target_project: &str,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    let projects: BTreeSet<&str> = samples.iter().map(|s| s.project.as_str()).collect();
    if !projects.contains(target_project) {
        return Err(CorpusError::UnknownProject {
            project: target_project.to_string(),
            available: projects.iter().map(|s| s.to_string()).collect(),
        });
    }
    let rest: Vec<&FunctionSample> = samples.iter().filter(|s| s.project != target_project).collect();
    if rest.is_empty() {
        return Err(CorpusError::NothingToTrain(target_project.to_string()));
    }
    let test = samples
        .iter()
        .filter(|s| s.project == target_project)
        .map(|s| s.id.clone())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let val_size = round_share(rest.len(), 0.1).min(rest.len() - 1);
    let [train, validation, _] = stratified_buckets(&rest, [val_size, 0], &mut rng);
    Ok(DatasetSplit {
        train,
        validation,
        test,
        split_kind: SplitKind::CrossProject,
        seed,
        target_project: Some(target_project.to_string()),
    })
}

/// Randomly drop non-vulnerable training functions until both classes have
/// the same count. Validation and test are returned untouched.
pub fn undersample_train(
    split: &DatasetSplit,
    samples: &[FunctionSample],
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    if split.train.is_empty() {
        return Err(CorpusError::EmptyTraining);
    }
    let vulnerable: HashSet<&str> = samples
        .iter()
        .filter(|s| s.function_vulnerable)
        .map(|s| s.id.as_str())
        .collect();
    let n_vul = split.train.iter().filter(|id| vulnerable.contains(id.as_str())).count();
    if n_vul == 0 {
        return Err(CorpusError::NoVulnerableTraining);
    }
    let safe: Vec<&String> = split.train.iter().filter(|id| !vulnerable.contains(id.as_str())).collect();
    let mut out = split.clone();
    if safe.len() <= n_vul {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x756e_6465_7273_616d);
    let keep: HashSet<&String> = safe.choose_multiple(&mut rng, n_vul).copied().collect();
    out.train
        .retain(|id| vulnerable.contains(id.as_str()) || keep.contains(id));
    Ok(out)
}
