//! Graph layers, the gated statement/function classifier and its gradients.

mod checkpoint;
mod layers;
mod model;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codegraph::{GraphView, StatementGraph};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use layers::{adjacency_to_neighbors, dense_gat_reference, dense_gcn_reference, gat_forward, gcn_forward, GatCache, GcnCache};
pub use model::{backward, forward, loss, loss_and_gradients, Features, ForwardCache, ModelInput, ModelOutput};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("dimension mismatch at {layer}: expected {expected}, got {got}")]
    DimMismatch { layer: String, expected: usize, got: usize },
    #[error("non-finite gradient in parameter block {0}")]
    NonFiniteGradient(String),
    #[error("labels do not match the statement count ({labels} labels, {statements} statements)")]
    LabelMismatch { labels: usize, statements: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GnnType {
    #[default]
    Gat,
    Gcn,
    None,
}

impl FromStr for GnnType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gat" => Ok(Self::Gat),
            "gcn" => Ok(Self::Gcn),
            "none" => Ok(Self::None),
            other => Err(format!("unknown gnn type {other:?} (expected gat, gcn or none)")),
        }
    }
}

impl fmt::Display for GnnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gat => "gat",
            Self::Gcn => "gcn",
            Self::None => "none",
        })
    }
}

/// How the function prediction enters the statement loss term.
///
/// `Hard`: the statement head is trained with plain cross entropy and the
/// function gate is applied only at inference. `Soft`: the statement term is
/// binary cross entropy on the product of statement and function
/// probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GatingMode {
    Hard,
    #[default]
    Soft,
}

impl FromStr for GatingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "hard" => Ok(Self::Hard),
            "soft" => Ok(Self::Soft),
            other => Err(format!("unknown gating mode {other:?} (expected hard or soft)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Self::Relu => f64::from(u8::from(pre > 0.0)),
            Self::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub gnn_type: GnnType,
    pub graph_view: GraphView,
    pub use_function_branch: bool,
    /// Embedding width of statement and function vectors.
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub gnn_layers: usize,
    pub heads: usize,
    pub mlp_layers: usize,
    pub dropout: f64,
    pub gating_mode: GatingMode,
    pub activation: Activation,
    /// Aggregate over both edge directions instead of in-neighbours.
    pub symmetric: bool,
    pub leaky_slope: f64,
    /// Weight of the function cross-entropy term.
    pub func_loss_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            gnn_type: GnnType::Gat,
            graph_view: GraphView::Pdg,
            use_function_branch: true,
            input_dim: 128,
            hidden_dim: 128,
            gnn_layers: 2,
            heads: 1,
            mlp_layers: 1,
            dropout: 0.2,
            gating_mode: GatingMode::Soft,
            activation: Activation::Relu,
            symmetric: false,
            leaky_slope: 0.2,
            func_loss_weight: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return bad("hidden_dim must be a positive multiple of heads");
        }
        if self.gnn_type != GnnType::None && self.gnn_layers == 0 {
            return bad("gnn_layers must be at least 1 unless gnn_type is none");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !self.leaky_slope.is_finite() || !self.func_loss_weight.is_finite() || self.func_loss_weight < 0.0 {
            return bad("leaky_slope and func_loss_weight must be finite (weight non-negative)");
        }
        Ok(())
    }

    /// Width of the statement representation entering the shared MLP.
    pub fn stmt_path_dim(&self) -> usize {
        if self.gnn_type == GnnType::None {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    /// Neighbour lists for `graph` under this configuration's view, with
    /// one self loop per node.
    pub fn neighborhoods(&self, graph: &StatementGraph) -> Vec<Vec<usize>> {
        let viewed = graph.view(self.graph_view);
        let mut nb = viewed.neighborhoods(self.symmetric);
        for (i, list) in nb.iter_mut().enumerate() {
            if let Err(pos) = list.binary_search(&i) {
                list.insert(pos, i);
            }
        }
        nb
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// out × in.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Multi-head attention layer. Rows of `w` are grouped by head; `a_dst`
/// scores the receiving node and `a_src` the neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub w: Array2<f64>,
    pub a_dst: Array2<f64>,
    pub a_src: Array2<f64>,
}

impl GatLayer {
    pub fn heads(&self) -> usize {
        self.a_dst.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub w: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GnnLayer {
    Gat(GatLayer),
    Gcn(GcnLayer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gnn: Vec<GnnLayer>,
    /// Maps the function vector to the statement path width when they differ.
    pub proj: Option<Linear>,
    pub mlp: Vec<Linear>,
    pub stmt_head: Linear,
    pub func_head: Option<Linear>,
    /// Token vectors for the trainable embedding backend; row 0 is UNK.
    pub token_table: Option<Array2<f64>>,
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..=limit))
}

fn glorot(rng: &mut impl Rng, out: usize, inp: usize) -> Array2<f64> {
    uniform(rng, out, inp, (6.0 / (out + inp) as f64).sqrt())
}

fn linear(rng: &mut impl Rng, out: usize, inp: usize) -> Linear {
    Linear { w: glorot(rng, out, inp), b: Array1::zeros(out) }
}

impl ModelParams {
    /// Random initialisation. `vocab` adds a token table with that many rows.
    pub fn init(config: &ModelConfig, vocab: Option<usize>, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let (d_in, hidden) = (config.input_dim, config.hidden_dim);
        let mut gnn = Vec::new();
        if config.gnn_type != GnnType::None {
            for l in 0..config.gnn_layers {
                let inp = if l == 0 { d_in } else { hidden };
                gnn.push(match config.gnn_type {
                    GnnType::Gat => {
                        let dh = hidden / config.heads;
                        let lim = (6.0 / (dh + 1) as f64).sqrt();
                        GnnLayer::Gat(GatLayer {
                            w: glorot(rng, hidden, inp),
                            a_dst: uniform(rng, config.heads, dh, lim),
                            a_src: uniform(rng, config.heads, dh, lim),
                        })
                    }
                    _ => GnnLayer::Gcn(GcnLayer { w: glorot(rng, hidden, inp) }),
                });
            }
        }
        let path = config.stmt_path_dim();
        let proj = (config.use_function_branch && path != d_in).then(|| linear(rng, path, d_in));
        let mut mlp = Vec::new();
        for l in 0..config.mlp_layers {
            mlp.push(linear(rng, hidden, if l == 0 { path } else { hidden }));
        }
        let head_in = if config.mlp_layers == 0 { path } else { hidden };
        let stmt_head = linear(rng, 2, head_in);
        let func_head = config.use_function_branch.then(|| linear(rng, 2, head_in));
        let token_table = vocab.map(|v| uniform(rng, v.max(1), d_in, (3.0 / d_in as f64).sqrt()));
        Ok(ModelParams { gnn, proj, mlp, stmt_head, func_head, token_table })
    }

    /// Same structure, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Every parameter block as (name, shape, row-major data).
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        let m2 = |a: &Array2<f64>| vec![a.nrows(), a.ncols()];
        fn s2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("parameters are stored row-major")
        }
        fn s1(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("parameters are stored contiguously")
        }
        for (i, layer) in self.gnn.iter().enumerate() {
            match layer {
                GnnLayer::Gat(g) => {
                    out.push((format!("gnn.{i}.w"), m2(&g.w), s2(&g.w)));
                    out.push((format!("gnn.{i}.a_dst"), m2(&g.a_dst), s2(&g.a_dst)));
                    out.push((format!("gnn.{i}.a_src"), m2(&g.a_src), s2(&g.a_src)));
                }
                GnnLayer::Gcn(g) => out.push((format!("gnn.{i}.w"), m2(&g.w), s2(&g.w))),
            }
        }
        fn lin<'a>(name: String, l: &'a Linear, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
            out.push((format!("{name}.w"), vec![l.w.nrows(), l.w.ncols()], s2(&l.w)));
            out.push((format!("{name}.b"), vec![l.b.len()], s1(&l.b)));
        }
        if let Some(p) = &self.proj {
            lin("proj".into(), p, &mut out);
        }
        for (i, l) in self.mlp.iter().enumerate() {
            lin(format!("mlp.{i}"), l, &mut out);
        }
        lin("stmt_head".into(), &self.stmt_head, &mut out);
        if let Some(f) = &self.func_head {
            lin("func_head".into(), f, &mut out);
        }
        if let Some(t) = &self.token_table {
            out.push(("token_table".into(), m2(t), s2(t)));
        }
        out
    }

    /// Mutable views in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        fn s2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("parameters are stored row-major")
        }
        for (i, layer) in self.gnn.iter_mut().enumerate() {
            match layer {
                GnnLayer::Gat(g) => {
                    out.push((format!("gnn.{i}.w"), s2(&mut g.w)));
                    out.push((format!("gnn.{i}.a_dst"), s2(&mut g.a_dst)));
                    out.push((format!("gnn.{i}.a_src"), s2(&mut g.a_src)));
                }
                GnnLayer::Gcn(g) => out.push((format!("gnn.{i}.w"), s2(&mut g.w))),
            }
        }
        fn lin<'a>(name: String, l: &'a mut Linear, out: &mut Vec<(String, &'a mut [f64])>) {
            out.push((format!("{name}.w"), l.w.as_slice_mut().expect("row-major")));
            out.push((format!("{name}.b"), l.b.as_slice_mut().expect("contiguous")));
        }
        if let Some(p) = &mut self.proj {
            lin("proj".into(), p, &mut out);
        }
        for (i, l) in self.mlp.iter_mut().enumerate() {
            lin(format!("mlp.{i}"), l, &mut out);
        }
        lin("stmt_head".into(), &mut self.stmt_head, &mut out);
        if let Some(f) = &mut self.func_head {
            lin("func_head".into(), f, &mut out);
        }
        if let Some(t) = &mut self.token_table {
            out.push(("token_table".into(), s2(t)));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    /// First block holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors().into_iter().find(|(_, _, d)| d.iter().any(|x| !x.is_finite())).map(|(n, _, _)| n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_shapes_chain() {
        let cfg = ModelConfig { input_dim: 6, hidden_dim: 4, heads: 2, ..Default::default() };
        let p = ModelParams::init(&cfg, Some(5), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _, _)| n).collect();
        assert_eq!(
            names,
            [
                "gnn.0.w", "gnn.0.a_dst", "gnn.0.a_src", "gnn.1.w", "gnn.1.a_dst", "gnn.1.a_src", "proj.w", "proj.b",
                "mlp.0.w", "mlp.0.b", "stmt_head.w", "stmt_head.b", "func_head.w", "func_head.b", "token_table"
            ]
        );
        let shapes: Vec<Vec<usize>> = p.tensors().into_iter().map(|(_, s, _)| s).collect();
        assert_eq!(shapes[0], [4, 6]);
        assert_eq!(shapes[1], [2, 2]);
        assert_eq!(shapes[3], [4, 4]);
        assert_eq!(shapes[6], [4, 6]);
        assert_eq!(shapes[14], [5, 6]);
        assert_eq!(p.zeros_like().tensors().iter().map(|t| t.2.iter().sum::<f64>()).sum::<f64>(), 0.0);
    }

    #[test]
    fn mlp_only_has_no_graph_or_projection() {
        let cfg = ModelConfig { gnn_type: GnnType::None, input_dim: 3, hidden_dim: 8, ..Default::default() };
        let p = ModelParams::init(&cfg, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(p.gnn.is_empty() && p.proj.is_none());
        assert_eq!(p.mlp[0].w.dim(), (8, 3));
    }

    #[test]
    fn config_validation() {
        let ok = ModelConfig::default();
        assert!(ok.validate().is_ok());
        assert!(ModelConfig { heads: 3, ..ok.clone() }.validate().is_err());
        assert!(ModelConfig { dropout: 1.0, ..ok.clone() }.validate().is_err());
        assert!(ModelConfig { gnn_layers: 0, ..ok }.validate().is_err());
    }
}
