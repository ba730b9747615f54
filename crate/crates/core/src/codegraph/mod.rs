//! Line-level statement graphs with control- and data-dependency edges.
//!
//! Graphs come from two places: [`import_graph`] reads the JSON export of an
//! external code-property-graph tool, and [`build_graph_builtin`] runs a small
//! intra-procedural analyzer over a C subset so the rest of the pipeline works
//! without any external tool.

mod builtin;
mod import;
mod libc_names;
mod stmt_type;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use builtin::build_graph_builtin;
pub use import::{import_graph, ExportEdge, ExportNode, GraphExport};
pub use libc_names::{is_libc_function, LIBC_NAMES_VERSION};
pub use stmt_type::{classify_raw_types, classify_statement, raw_types_for_text};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge {src} -> {dst} references unknown node id {missing}")]
    UnknownNode { src: i64, dst: i64, missing: i64 },
    #[error("node {id} is on line {line} but the code has {lines} lines")]
    LineOutOfRange { id: i64, line: i64, lines: usize },
    #[error("duplicate node id {0} in export")]
    DuplicateNode(i64),
    #[error("self loops were already added to graph {0:?}")]
    SelfLoopsPresent(String),
    #[error("invalid graph export: {0}")]
    Parse(String),
}

/// Statement categories used for per-type reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StatementType {
    FunctionDeclaration,
    IfStatement,
    WhileStatement,
    ForStatement,
    SwitchStatement,
    ReturnStatement,
    GotoStatement,
    Break,
    Continue,
    JumpTarget,
    BuiltinFunctionCall,
    ExternalFunctionCall,
    AssignmentOperation,
    ArithmeticOperation,
    ComparisonOperation,
    AccessOperation,
    LogicalOperation,
    CastOperation,
    OtherOperation,
}

impl StatementType {
    pub const ALL: [StatementType; 19] = [
        StatementType::FunctionDeclaration,
        StatementType::IfStatement,
        StatementType::WhileStatement,
        StatementType::ForStatement,
        StatementType::SwitchStatement,
        StatementType::ReturnStatement,
        StatementType::GotoStatement,
        StatementType::Break,
        StatementType::Continue,
        StatementType::JumpTarget,
        StatementType::BuiltinFunctionCall,
        StatementType::ExternalFunctionCall,
        StatementType::AssignmentOperation,
        StatementType::ArithmeticOperation,
        StatementType::ComparisonOperation,
        StatementType::AccessOperation,
        StatementType::LogicalOperation,
        StatementType::CastOperation,
        StatementType::OtherOperation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StatementType::FunctionDeclaration => "Function Declaration",
            StatementType::IfStatement => "If Statement",
            StatementType::WhileStatement => "While Statement",
            StatementType::ForStatement => "For Statement",
            StatementType::SwitchStatement => "Switch Statement",
            StatementType::ReturnStatement => "Return Statement",
            StatementType::GotoStatement => "Goto Statement",
            StatementType::Break => "Break",
            StatementType::Continue => "Continue",
            StatementType::JumpTarget => "Jump Target",
            StatementType::BuiltinFunctionCall => "Builtin Function Call",
            StatementType::ExternalFunctionCall => "External Function Call",
            StatementType::AssignmentOperation => "Assignment Operation",
            StatementType::ArithmeticOperation => "Arithmetic Operation",
            StatementType::ComparisonOperation => "Comparison Operation",
            StatementType::AccessOperation => "Access Operation",
            StatementType::LogicalOperation => "Logical Operation",
            StatementType::CastOperation => "Cast Operation",
            StatementType::OtherOperation => "Other Operation",
        }
    }
}

impl fmt::Display for StatementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementNode {
    /// 1-based line in the comment-stripped function.
    pub line_no: usize,
    pub code_text: String,
    pub stmt_type: StatementType,
    /// Sub-line node types merged into this line, in a stable order.
    pub raw_types: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    ControlDep,
    DataDep,
    SelfLoop,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub src_line: usize,
    pub dst_line: usize,
    pub kind: EdgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
}

impl DependencyEdge {
    pub fn control(src_line: usize, dst_line: usize) -> Self {
        DependencyEdge { src_line, dst_line, kind: EdgeKind::ControlDep, variable: None }
    }

    pub fn data(src_line: usize, dst_line: usize, variable: impl Into<String>) -> Self {
        DependencyEdge {
            src_line,
            dst_line,
            kind: EdgeKind::DataDep,
            variable: Some(variable.into()),
        }
    }
}

/// Which dependency edges a model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GraphView {
    /// Control and data dependencies.
    #[default]
    Pdg,
    /// Control dependencies only.
    Cdg,
}

impl std::str::FromStr for GraphView {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pdg" => Ok(GraphView::Pdg),
            "cdg" => Ok(GraphView::Cdg),
            other => Err(format!("unknown graph view {other:?} (expected pdg or cdg)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementGraph {
    pub function_id: String,
    /// Ascending by line number, one node per line.
    pub nodes: Vec<StatementNode>,
    pub edges: Vec<DependencyEdge>,
    #[serde(default)]
    pub self_loops_added: bool,
}

impl StatementGraph {
    /// Build a graph from nodes and edges, sorting nodes, dropping same-line
    /// dependency edges and duplicate edge tuples.
    pub fn from_parts(
        function_id: impl Into<String>,
        mut nodes: Vec<StatementNode>,
        edges: impl IntoIterator<Item = DependencyEdge>,
    ) -> Self {
        nodes.sort_by_key(|n| n.line_no);
        let edges: BTreeSet<DependencyEdge> = edges
            .into_iter()
            .filter(|e| e.src_line != e.dst_line || e.kind == EdgeKind::SelfLoop)
            .collect();
        StatementGraph {
            function_id: function_id.into(),
            nodes,
            edges: edges.into_iter().collect(),
            self_loops_added: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, line: usize) -> Option<usize> {
        self.nodes.binary_search_by_key(&line, |n| n.line_no).ok()
    }

    pub fn lines(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.line_no).collect()
    }

    /// Add one self-loop edge per node.
    pub fn add_self_loops(mut self) -> Result<Self, GraphError> {
        if self.self_loops_added {
            return Err(GraphError::SelfLoopsPresent(self.function_id));
        }
        self.edges.retain(|e| e.kind != EdgeKind::SelfLoop);
        self.edges.extend(self.nodes.iter().map(|n| DependencyEdge {
            src_line: n.line_no,
            dst_line: n.line_no,
            kind: EdgeKind::SelfLoop,
            variable: None,
        }));
        self.edges.sort();
        self.self_loops_added = true;
        Ok(self)
    }

    /// PDG keeps every edge; CDG drops data dependencies.
    pub fn view(&self, kind: GraphView) -> Self {
        let mut g = self.clone();
        if kind == GraphView::Cdg {
            g.edges.retain(|e| e.kind != EdgeKind::DataDep);
        }
        g
    }

    /// True when at least one control or data edge exists.
    pub fn has_dependencies(&self) -> bool {
        self.edges.iter().any(|e| e.kind != EdgeKind::SelfLoop)
    }

    /// Per-node neighbour indices for message passing, deduplicated and
    /// sorted. Directed mode lists in-neighbours (sources of edges ending at
    /// the node); symmetric mode lists both directions. Self loops are
    /// included only when present as edges.
    pub fn neighborhoods(&self, symmetric: bool) -> Vec<Vec<usize>> {
        let mut sets = vec![BTreeSet::new(); self.nodes.len()];
        for e in &self.edges {
            let (Some(s), Some(d)) = (self.node_index(e.src_line), self.node_index(e.dst_line)) else {
                continue;
            };
            sets[d].insert(s);
            if symmetric {
                sets[s].insert(d);
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }
}
