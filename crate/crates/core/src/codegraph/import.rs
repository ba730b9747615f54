use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{classify_raw_types, DependencyEdge, EdgeKind, GraphError, StatementGraph, StatementNode};

/// Graph export produced by an adapter around an external CPG tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<ExportNode>,
    pub edges: Vec<ExportEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportNode {
    pub id: i64,
    pub line: Option<i64>,
    #[serde(rename = "type")]
    pub node_type: String,
    #[serde(default)]
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportEdge {
    pub src: i64,
    pub dst: i64,
    /// `CDG` or `DDG`.
    pub etype: String,
    #[serde(default)]
    pub var: Option<String>,
}

impl GraphExport {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))
    }
}

/// Collapse an export into one node per source line.
///
/// Nodes without a line number are dropped, as are nodes that sit on a line
/// that is blank in `code` (comments are blanked before export). Edges are
/// re-targeted to line pairs; edges that collapse onto a single line are
/// removed.
pub fn import_graph(
    function_id: &str,
    export: &GraphExport,
    code: &str,
) -> Result<StatementGraph, GraphError> {
    let lines: Vec<&str> = code.lines().collect();
    let mut line_of: HashMap<i64, Option<usize>> = HashMap::new();
    let mut by_line: BTreeMap<usize, Vec<(i64, &str)>> = BTreeMap::new();
    for n in &export.nodes {
        if line_of.contains_key(&n.id) {
            return Err(GraphError::DuplicateNode(n.id));
        }
        let line = match n.line {
            None => None,
            Some(l) if l < 1 || l as usize > lines.len() => {
                return Err(GraphError::LineOutOfRange { id: n.id, line: l, lines: lines.len() })
            }
            Some(l) if lines[l as usize - 1].trim().is_empty() => None,
            Some(l) => Some(l as usize),
        };
        if let Some(l) = line {
            by_line.entry(l).or_default().push((n.id, n.node_type.as_str()));
        }
        line_of.insert(n.id, line);
    }

    let nodes = by_line
        .into_iter()
        .map(|(line, mut members)| {
            members.sort_by_key(|(id, _)| *id);
            let raw_types: Vec<String> = members.into_iter().map(|(_, t)| t.to_string()).collect();
            StatementNode {
                line_no: line,
                code_text: lines[line - 1].trim().to_string(),
                stmt_type: classify_raw_types(&raw_types),
                raw_types,
            }
        })
        .collect();

    let mut edges = Vec::with_capacity(export.edges.len());
    for e in &export.edges {
        let lookup = |id: i64| {
            line_of
                .get(&id)
                .copied()
                .ok_or(GraphError::UnknownNode { src: e.src, dst: e.dst, missing: id })
        };
        let (src, dst) = (lookup(e.src)?, lookup(e.dst)?);
        let (Some(src_line), Some(dst_line)) = (src, dst) else {
            continue;
        };
        let kind = match e.etype.to_ascii_uppercase().as_str() {
            "CDG" => EdgeKind::ControlDep,
            "DDG" => EdgeKind::DataDep,
            other => return Err(GraphError::Parse(format!("unknown edge type {other:?}"))),
        };
        edges.push(DependencyEdge {
            src_line,
            dst_line,
            kind,
            variable: if kind == EdgeKind::DataDep { e.var.clone() } else { None },
        });
    }
    Ok(StatementGraph::from_parts(function_id, nodes, edges))
}
