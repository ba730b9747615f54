//! Statement-level ground truth from a before/after fix pair.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codegraph::{build_graph_builtin, EdgeKind, StatementGraph};
use crate::corpus::{strip_comments, FunctionSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Context,
    Deleted,
    Added,
}

/// Line diff laid out as one merged sequence. Merged indices are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffResult {
    pub merged_lines: Vec<(Origin, String)>,
    pub before_line_of: BTreeMap<usize, usize>,
    pub after_line_of: BTreeMap<usize, usize>,
}

impl DiffResult {
    fn project(&self, skip: Origin, blank: bool) -> String {
        let mut out: Vec<&str> = Vec::with_capacity(self.merged_lines.len());
        for (origin, text) in &self.merged_lines {
            if *origin != skip {
                out.push(text);
            } else if blank {
                out.push("");
            }
        }
        out.join("\n")
    }

    pub fn before_text(&self) -> String {
        self.project(Origin::Added, false)
    }

    pub fn after_text(&self) -> String {
        self.project(Origin::Deleted, false)
    }

    /// Merged layout with added lines blanked.
    pub fn before_view(&self) -> String {
        self.project(Origin::Added, true)
    }

    /// Merged layout with deleted lines blanked.
    pub fn after_view(&self) -> String {
        self.project(Origin::Deleted, true)
    }

    fn lines_with(&self, origin: Origin) -> BTreeSet<usize> {
        self.merged_lines
            .iter()
            .enumerate()
            .filter(|(_, (o, _))| *o == origin)
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn added_lines(&self) -> BTreeSet<usize> {
        self.lines_with(Origin::Added)
    }

    pub fn deleted_lines(&self) -> BTreeSet<usize> {
        self.lines_with(Origin::Deleted)
    }
}

/// Line-level LCS diff. A replaced line comes out as deletion then addition.
pub fn compute_diff(before: &str, after: &str) -> DiffResult {
    let a: Vec<&str> = before.lines().collect();
    let b: Vec<&str> = after.lines().collect();
    let (n, m) = (a.len(), b.len());
    let width = m + 1;
    let mut dp = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i * width + j] = if a[i] == b[j] {
                dp[(i + 1) * width + j + 1] + 1
            } else {
                dp[(i + 1) * width + j].max(dp[i * width + j + 1])
            };
        }
    }
    let mut res = DiffResult { merged_lines: Vec::new(), before_line_of: BTreeMap::new(), after_line_of: BTreeMap::new() };
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        let k = res.merged_lines.len() + 1;
        if i < n && j < m && a[i] == b[j] {
            res.merged_lines.push((Origin::Context, a[i].to_string()));
            res.before_line_of.insert(k, i + 1);
            res.after_line_of.insert(k, j + 1);
            i += 1;
            j += 1;
        } else if i < n && (j == m || dp[(i + 1) * width + j] >= dp[i * width + j + 1]) {
            res.merged_lines.push((Origin::Deleted, a[i].to_string()));
            res.before_line_of.insert(k, i + 1);
            i += 1;
        } else {
            res.merged_lines.push((Origin::Added, b[j].to_string()));
            res.after_line_of.insert(k, j + 1);
            j += 1;
        }
    }
    res
}

/// Which incident edges make a line dependent on an added line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepDirection {
    /// Edges leaving the added line.
    Out,
    /// Edges entering the added line.
    In,
    #[default]
    Both,
}

impl FromStr for DepDirection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "out" => Ok(Self::Out),
            "in" => Ok(Self::In),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown dependency direction {other:?} (expected out, in or both)")),
        }
    }
}

/// Lines one dependence edge away from an added line (self loops ignored).
pub fn dependent_lines(after_graph: &StatementGraph, added: &BTreeSet<usize>, direction: DepDirection) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for e in &after_graph.edges {
        if e.kind == EdgeKind::SelfLoop || e.src_line == e.dst_line {
            continue;
        }
        if matches!(direction, DepDirection::Out | DepDirection::Both) && added.contains(&e.src_line) {
            out.insert(e.dst_line);
        }
        if matches!(direction, DepDirection::In | DepDirection::Both) && added.contains(&e.dst_line) {
            out.insert(e.src_line);
        }
    }
    out.retain(|l| !added.contains(l));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Deleted,
    Dependent,
}

/// Per-line labels over the before-version statements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub function_id: String,
    pub labels: BTreeMap<usize, u8>,
    pub provenance: BTreeMap<usize, Provenance>,
}

/// One row of the label JSONL output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub vul_lines: Vec<usize>,
    pub provenance: BTreeMap<String, Provenance>,
}

impl LabelSet {
    pub fn vul_lines(&self) -> Vec<usize> {
        self.labels.iter().filter(|(_, v)| **v == 1).map(|(l, _)| *l).collect()
    }

    pub fn label_of(&self, line: usize) -> u8 {
        self.labels.get(&line).copied().unwrap_or(0)
    }

    pub fn to_record(&self) -> LabelRecord {
        LabelRecord {
            id: self.function_id.clone(),
            vul_lines: self.vul_lines(),
            provenance: self.provenance.iter().map(|(l, p)| (l.to_string(), *p)).collect(),
        }
    }

    /// Rebuild from a JSONL row; statement lines come from the before graph.
    pub fn from_record(rec: &LabelRecord, before_graph: &StatementGraph) -> Self {
        let vul: BTreeSet<usize> = rec.vul_lines.iter().copied().collect();
        LabelSet {
            function_id: rec.id.clone(),
            labels: before_graph.lines().into_iter().map(|l| (l, u8::from(vul.contains(&l)))).collect(),
            provenance: rec
                .provenance
                .iter()
                .filter_map(|(k, p)| k.parse().ok().map(|l| (l, *p)))
                .collect(),
        }
    }
}

/// Label the before-version statements of `sample`.
///
/// `before_graph` supplies the statement lines (before numbering);
/// `after_graph` must be built on `diff.after_view()`.
pub fn derive_labels(
    sample: &FunctionSample,
    before_graph: &StatementGraph,
    after_graph: &StatementGraph,
    diff: &DiffResult,
    direction: DepDirection,
) -> LabelSet {
    let statements: BTreeSet<usize> = before_graph.lines().into_iter().collect();
    let mut labels: BTreeMap<usize, u8> = statements.iter().map(|&l| (l, 0)).collect();
    let mut provenance = BTreeMap::new();
    if sample.function_vulnerable {
        for merged in diff.deleted_lines() {
            let line = diff.before_line_of[&merged];
            if statements.contains(&line) {
                labels.insert(line, 1);
                provenance.insert(line, Provenance::Deleted);
            }
        }
        for merged in dependent_lines(after_graph, &diff.added_lines(), direction) {
            let Some(&line) = diff.before_line_of.get(&merged) else { continue };
            if statements.contains(&line) && !provenance.contains_key(&line) {
                labels.insert(line, 1);
                provenance.insert(line, Provenance::Dependent);
            }
        }
    }
    LabelSet { function_id: sample.id.clone(), labels, provenance }
}

/// Everything labeling produces for one sample.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub diff: DiffResult,
    pub before_graph: StatementGraph,
    pub after_graph: StatementGraph,
    pub labels: LabelSet,
}

/// Strip comments, diff, build both graphs with the built-in analyzer and
/// derive labels.
pub fn label_sample(sample: &FunctionSample, direction: DepDirection) -> LabeledSample {
    let before = strip_comments(&sample.code_before);
    let after = strip_comments(&sample.code_after);
    let diff = compute_diff(&before, &after);
    let before_graph = build_graph_builtin(&sample.id, &before);
    let after_graph = build_graph_builtin(&sample.id, &diff.after_view());
    let labels = derive_labels(sample, &before_graph, &after_graph, &diff, direction);
    LabeledSample { diff, before_graph, after_graph, labels }
}
