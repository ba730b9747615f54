use ndarray::{Array1, Array2, Axis};
use rand::{Rng, RngCore};

use super::layers::{gat_backward, gat_forward, gcn_backward, gcn_forward, GatCache, GcnCache};
use super::{GatingMode, GnnLayer, Linear, ModelConfig, ModelError, ModelParams};

/// Statement and function features for one function.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    /// Precomputed vectors (pretrained backend or any fixed encoder).
    Dense { func: Array1<f64>, stmts: Array2<f64> },
    /// Token ids into the model's token table; vectors are row means.
    Tokens { func: Vec<usize>, stmts: Vec<Vec<usize>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// Per-node neighbour lists including the node itself.
    pub neighbors: Vec<Vec<usize>>,
    pub features: Features,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// Absent without the function branch.
    pub func_logits: Option<[f64; 2]>,
    pub stmt_logits: Array2<f64>,
    /// 1 without the function branch.
    pub func_prob_vul: f64,
    pub stmt_prob_vul: Vec<f64>,
    /// Hard-gated at inference, probability product in training mode.
    pub gated_stmt_prob: Vec<f64>,
    pub gate_open: bool,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Gat(GatCache),
    Gcn(GcnCache),
}

#[derive(Debug, Clone)]
struct MlpCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    /// Scaled keep mask, when dropout was applied.
    mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    gnn: Vec<LayerCache>,
    stmt_mlp: Vec<MlpCache>,
    func_mlp: Vec<MlpCache>,
    func_input: Array2<f64>,
    proj_out: Option<Array2<f64>>,
    stmt_final: Array2<f64>,
    func_final: Array2<f64>,
}

impl ForwardCache {
    /// Attention weights per GAT layer, `[layer][head][node][k]`.
    pub fn attention(&self) -> Vec<&Vec<Vec<Vec<f64>>>> {
        self.gnn
            .iter()
            .filter_map(|c| match c {
                LayerCache::Gat(g) => Some(&g.alpha),
                LayerCache::Gcn(_) => None,
            })
            .collect()
    }

    /// Statement representation entering the shared MLP.
    pub fn graph_output(&self) -> &Array2<f64> {
        match self.stmt_mlp.first() {
            Some(m) => &m.input,
            None => &self.stmt_final,
        }
    }
}

fn mismatch(layer: &str, expected: usize, got: usize) -> ModelError {
    ModelError::DimMismatch { layer: layer.to_string(), expected, got }
}

fn mean_rows(table: &Array2<f64>, ids: &[usize]) -> Array1<f64> {
    if ids.is_empty() {
        return table.row(0).to_owned();
    }
    if ids.iter().all(|t| *t == ids[0]) {
        return table.row(ids[0]).to_owned();
    }
    let mut v = Array1::zeros(table.ncols());
    for &t in ids {
        v += &table.row(t);
    }
    v / ids.len() as f64
}

fn resolve_features(params: &ModelParams, config: &ModelConfig, input: &ModelInput) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
    let n = input.len();
    let d = config.input_dim;
    let (x, f) = match &input.features {
        Features::Dense { func, stmts } => {
            if stmts.nrows() != n {
                return Err(mismatch("statement features (rows)", n, stmts.nrows()));
            }
            if stmts.ncols() != d {
                return Err(mismatch("statement features", d, stmts.ncols()));
            }
            if func.len() != d {
                return Err(mismatch("function features", d, func.len()));
            }
            (stmts.clone(), func.clone().insert_axis(Axis(0)))
        }
        Features::Tokens { func, stmts } => {
            let table = params
                .token_table
                .as_ref()
                .ok_or_else(|| ModelError::Config("token features need a token table".into()))?;
            if stmts.len() != n {
                return Err(mismatch("statement tokens", n, stmts.len()));
            }
            if table.ncols() != d {
                return Err(mismatch("token_table", d, table.ncols()));
            }
            let vocab = table.nrows();
            if let Some(&bad) = stmts.iter().flatten().chain(func).find(|&&t| t >= vocab) {
                return Err(mismatch("token id", vocab, bad));
            }
            let mut x = Array2::zeros((n, d));
            for (i, ids) in stmts.iter().enumerate() {
                x.row_mut(i).assign(&mean_rows(table, ids));
            }
            (x, mean_rows(table, func).insert_axis(Axis(0)))
        }
    };
    Ok((x, f))
}

fn linear_forward(l: &Linear, x: &Array2<f64>) -> Array2<f64> {
    x.dot(&l.w.t()) + &l.b
}

fn mlp_forward(
    layers: &[Linear],
    mut x: Array2<f64>,
    dropout: f64,
    rng: &mut Option<&mut dyn RngCore>,
) -> (Array2<f64>, Vec<MlpCache>) {
    let mut caches = Vec::with_capacity(layers.len());
    for l in layers {
        let pre = linear_forward(l, &x);
        let mut out = pre.mapv(|v| v.max(0.0));
        let mask = match rng {
            Some(r) if dropout > 0.0 => {
                let keep = 1.0 - dropout;
                let m = Array2::from_shape_fn(out.dim(), |_| if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
                out *= &m;
                Some(m)
            }
            _ => None,
        };
        caches.push(MlpCache { input: x, pre, mask });
        x = out;
    }
    (x, caches)
}

fn softmax2(l0: f64, l1: f64) -> f64 {
    // Probability of class 1.
    1.0 / (1.0 + (l0 - l1).exp())
}

/// Run the model. Passing an RNG selects training mode: dropout is applied
/// and the gate is the probability product; otherwise the hard gate is used.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    input: &ModelInput,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<(ModelOutput, ForwardCache), ModelError> {
    if input.is_empty() {
        return Err(mismatch("statement count", 1, 0));
    }
    let (x, f) = resolve_features(params, config, input)?;
    let mut h = x;
    let mut gnn_caches = Vec::with_capacity(params.gnn.len());
    for (i, layer) in params.gnn.iter().enumerate() {
        let name = format!("gnn.{i}");
        match layer {
            GnnLayer::Gat(g) => {
                if g.w.ncols() != h.ncols() {
                    return Err(mismatch(&name, g.w.ncols(), h.ncols()));
                }
                let (out, c) = gat_forward(g, &input.neighbors, h.view(), config.leaky_slope, config.activation);
                h = out;
                gnn_caches.push(LayerCache::Gat(c));
            }
            GnnLayer::Gcn(g) => {
                if g.w.ncols() != h.ncols() {
                    return Err(mismatch(&name, g.w.ncols(), h.ncols()));
                }
                let (out, c) = gcn_forward(g, &input.neighbors, h.view(), config.activation);
                h = out;
                gnn_caches.push(LayerCache::Gcn(c));
            }
        }
    }
    if let Some(first) = params.mlp.first() {
        if first.w.ncols() != h.ncols() {
            return Err(mismatch("mlp.0", first.w.ncols(), h.ncols()));
        }
    }
    let (stmt_final, stmt_mlp) = mlp_forward(&params.mlp, h, config.dropout, &mut rng);
    let stmt_logits = linear_forward(&params.stmt_head, &stmt_final);
    let stmt_prob: Vec<f64> = stmt_logits.rows().into_iter().map(|r| softmax2(r[0], r[1])).collect();

    let (func_logits, func_final, func_mlp, proj_out) = match &params.func_head {
        Some(head) => {
            let proj_out = params.proj.as_ref().map(|p| linear_forward(p, &f));
            let path_in = proj_out.clone().unwrap_or_else(|| f.clone());
            if let Some(first) = params.mlp.first() {
                if first.w.ncols() != path_in.ncols() {
                    return Err(mismatch("mlp.0 (function path)", first.w.ncols(), path_in.ncols()));
                }
            }
            let (ff, fm) = mlp_forward(&params.mlp, path_in, config.dropout, &mut rng);
            let fl = linear_forward(head, &ff);
            (Some([fl[[0, 0]], fl[[0, 1]]]), ff, fm, proj_out)
        }
        None => (None, Array2::zeros((0, 0)), Vec::new(), None),
    };
    let func_prob = func_logits.map_or(1.0, |l| softmax2(l[0], l[1]));
    let gate_open = func_logits.is_none_or(|l| l[1] > l[0]);
    let training = rng.is_some();
    let gated: Vec<f64> = if training {
        stmt_prob.iter().map(|p| p * func_prob).collect()
    } else if gate_open {
        stmt_prob.clone()
    } else {
        vec![0.0; stmt_prob.len()]
    };
    let output = ModelOutput {
        func_logits,
        stmt_logits,
        func_prob_vul: func_prob,
        stmt_prob_vul: stmt_prob,
        gated_stmt_prob: gated,
        gate_open,
    };
    let cache = ForwardCache { gnn: gnn_caches, stmt_mlp, func_mlp, func_input: f, proj_out, stmt_final, func_final };
    Ok((output, cache))
}

fn log_softmax2(l0: f64, l1: f64) -> (f64, f64) {
    let m = l0.max(l1);
    let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
    (l0 - lse, l1 - lse)
}

struct LossTerms {
    loss: f64,
    d_stmt: Array2<f64>,
    d_func: Option<[f64; 2]>,
}

fn loss_terms(output: &ModelOutput, labels: &[u8], func_label: bool, config: &ModelConfig) -> Result<LossTerms, ModelError> {
    let n = output.stmt_logits.nrows();
    if labels.len() != n {
        return Err(ModelError::LabelMismatch { labels: labels.len(), statements: n });
    }
    let nf = n as f64;
    let mut d_stmt = Array2::zeros((n, 2));
    let mut loss = 0.0;
    let soft = config.gating_mode == GatingMode::Soft && output.func_logits.is_some();
    let q = output.func_prob_vul;
    let mut d_q = 0.0;
    for i in 0..n {
        let (l0, l1) = (output.stmt_logits[[i, 0]], output.stmt_logits[[i, 1]]);
        let y = labels[i] == 1;
        let p = softmax2(l0, l1);
        if soft {
            let (_, lp) = log_softmax2(l0, l1);
            let (_, lq) = {
                let fl = output.func_logits.unwrap();
                log_softmax2(fl[0], fl[1])
            };
            let g = (lp + lq).exp();
            if y {
                loss -= (lp + lq) / nf;
                // d(-log p - log q): logits of p and q independently.
                d_stmt[[i, 1]] -= (1.0 - p) / nf;
                d_stmt[[i, 0]] += (1.0 - p) / nf;
                d_q -= 1.0 / q.max(f64::MIN_POSITIVE) / nf;
            } else {
                let one_minus = (1.0 - g).max(f64::MIN_POSITIVE);
                loss -= (-g).ln_1p().max(f64::MIN_POSITIVE.ln()) / nf;
                let c = g / one_minus;
                d_stmt[[i, 1]] += c * (1.0 - p) / nf;
                d_stmt[[i, 0]] -= c * (1.0 - p) / nf;
                d_q += p / one_minus / nf;
            }
        } else {
            let (lp0, lp1) = log_softmax2(l0, l1);
            loss -= if y { lp1 } else { lp0 } / nf;
            let target = f64::from(u8::from(y));
            d_stmt[[i, 1]] += (p - target) / nf;
            d_stmt[[i, 0]] += (target - p) / nf;
        }
    }
    let d_func = output.func_logits.map(|fl| {
        let (f0, f1) = log_softmax2(fl[0], fl[1]);
        let w = config.func_loss_weight;
        loss -= w * if func_label { f1 } else { f0 };
        let target = f64::from(u8::from(func_label));
        let mut d = [w * (target - q), w * (q - target)];
        if soft {
            // dq/dl1 = q(1-q), dq/dl0 = -q(1-q)
            let s = d_q * q * (1.0 - q);
            d[1] += s;
            d[0] -= s;
        }
        d
    });
    Ok(LossTerms { loss, d_stmt, d_func })
}

/// Mean statement term plus the weighted function cross entropy.
pub fn loss(output: &ModelOutput, stmt_labels: &[u8], func_label: bool, config: &ModelConfig) -> Result<f64, ModelError> {
    loss_terms(output, stmt_labels, func_label, config).map(|t| t.loss)
}

fn linear_backward(l: &Linear, x: &Array2<f64>, dy: &Array2<f64>, g: &mut Linear) -> Array2<f64> {
    g.w += &dy.t().dot(x);
    g.b += &dy.sum_axis(Axis(0));
    dy.dot(&l.w)
}

fn mlp_backward(layers: &[Linear], caches: &[MlpCache], mut dy: Array2<f64>, grads: &mut [Linear]) -> Array2<f64> {
    for (k, (l, c)) in layers.iter().zip(caches).enumerate().rev() {
        if let Some(m) = &c.mask {
            dy *= m;
        }
        dy.zip_mut_with(&c.pre, |d, &p| {
            if p <= 0.0 {
                *d = 0.0
            }
        });
        dy = linear_backward(l, &c.input, &dy, &mut grads[k]);
    }
    dy
}

/// Parameter gradients for the given output-logit gradients.
pub fn backward(
    params: &ModelParams,
    config: &ModelConfig,
    input: &ModelInput,
    cache: &ForwardCache,
    d_stmt_logits: &Array2<f64>,
    d_func_logits: Option<[f64; 2]>,
) -> ModelParams {
    let mut g = params.zeros_like();
    let d_stmt_final = linear_backward(&params.stmt_head, &cache.stmt_final, d_stmt_logits, &mut g.stmt_head);
    let mut dh = mlp_backward(&params.mlp, &cache.stmt_mlp, d_stmt_final, &mut g.mlp);
    for (i, layer) in params.gnn.iter().enumerate().rev() {
        dh = match (layer, &cache.gnn[i], &mut g.gnn[i]) {
            (GnnLayer::Gat(l), LayerCache::Gat(c), GnnLayer::Gat(gl)) => {
                gat_backward(l, &input.neighbors, c, &dh, config.leaky_slope, config.activation, gl)
            }
            (GnnLayer::Gcn(l), LayerCache::Gcn(c), GnnLayer::Gcn(gl)) => {
                gcn_backward(l, &input.neighbors, c, &dh, config.activation, gl)
            }
            _ => unreachable!("cache layout follows the parameter layout"),
        };
    }
    let mut d_func_in = None;
    if let (Some(head), Some(df), Some(gh)) = (&params.func_head, d_func_logits, g.func_head.as_mut()) {
        let dy = Array2::from_shape_vec((1, 2), df.to_vec()).expect("1x2");
        let d_final = linear_backward(head, &cache.func_final, &dy, gh);
        let d_path = mlp_backward(&params.mlp, &cache.func_mlp, d_final, &mut g.mlp);
        d_func_in = Some(match (&params.proj, g.proj.as_mut()) {
            (Some(p), Some(gp)) => linear_backward(p, &cache.func_input, &d_path, gp),
            _ => d_path,
        });
    }
    if let (Features::Tokens { func, stmts }, Some(gt)) = (&input.features, g.token_table.as_mut()) {
        let mut scatter = |ids: &[usize], d: ndarray::ArrayView1<f64>| {
            if ids.is_empty() {
                gt.row_mut(0).scaled_add(1.0, &d);
            } else {
                let w = 1.0 / ids.len() as f64;
                for &t in ids {
                    gt.row_mut(t).scaled_add(w, &d);
                }
            }
        };
        for (i, ids) in stmts.iter().enumerate() {
            scatter(ids, dh.row(i));
        }
        if let Some(df) = &d_func_in {
            scatter(func, df.row(0));
        }
    }
    let _ = &cache.proj_out;
    g
}

/// Forward, loss and gradients in one call.
pub fn loss_and_gradients(
    params: &ModelParams,
    config: &ModelConfig,
    input: &ModelInput,
    stmt_labels: &[u8],
    func_label: bool,
    rng: Option<&mut dyn RngCore>,
) -> Result<(f64, ModelParams, ModelOutput), ModelError> {
    let (out, cache) = forward(params, config, input, rng)?;
    let terms = loss_terms(&out, stmt_labels, func_label, config)?;
    let grads = backward(params, config, input, &cache, &terms.d_stmt, terms.d_func);
    if let Some(block) = grads.first_non_finite() {
        return Err(ModelError::NonFiniteGradient(block));
    }
    Ok((terms.loss, grads, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{GnnType, ModelParams};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(gnn: GnnType, func: bool, gating: GatingMode) -> (ModelConfig, ModelParams, ModelInput) {
        let cfg = ModelConfig {
            gnn_type: gnn,
            use_function_branch: func,
            input_dim: 3,
            hidden_dim: 4,
            heads: 2,
            dropout: 0.0,
            gating_mode: gating,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = ModelParams::init(&cfg, Some(6), &mut rng).unwrap();
        let input = ModelInput {
            neighbors: vec![vec![0], vec![0, 1], vec![1, 2, 3], vec![3]],
            features: Features::Tokens { func: vec![1, 2, 3, 4, 5], stmts: vec![vec![1, 2], vec![3], vec![0, 4], vec![5, 5]] },
        };
        (cfg, params, input)
    }

    fn check_gradients(cfg: &ModelConfig, params: &ModelParams, input: &ModelInput) {
        let labels = [0, 1, 1, 0];
        let (_, grads, _) = loss_and_gradients(params, cfg, input, &labels, true, None).unwrap();
        let eps = 1e-6;
        let analytic = grads.tensors();
        let mut probe = params.clone();
        let count = probe.tensors_mut().len();
        for b in 0..count {
            let len = probe.tensors_mut()[b].1.len();
            for k in 0..len {
                let orig = probe.tensors_mut()[b].1[k];
                probe.tensors_mut()[b].1[k] = orig + eps;
                let (o, _) = forward(&probe, cfg, input, None).unwrap();
                let lp = loss(&o, &labels, true, cfg).unwrap();
                probe.tensors_mut()[b].1[k] = orig - eps;
                let (o, _) = forward(&probe, cfg, input, None).unwrap();
                let lm = loss(&o, &labels, true, cfg).unwrap();
                probe.tensors_mut()[b].1[k] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                let an = analytic[b].2[k];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err <= 1e-4, "{}[{k}]: analytic {an} vs numeric {fd}", analytic[b].0);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for gnn in [GnnType::Gat, GnnType::Gcn, GnnType::None] {
            for func in [true, false] {
                for gating in [GatingMode::Hard, GatingMode::Soft] {
                    let (cfg, p, input) = tiny(gnn, func, gating);
                    check_gradients(&cfg, &p, &input);
                }
            }
        }
    }

    #[test]
    fn uniform_logits_give_ln2_terms() {
        let out = ModelOutput {
            func_logits: Some([0.0, 0.0]),
            stmt_logits: Array2::zeros((3, 2)),
            func_prob_vul: 0.5,
            stmt_prob_vul: vec![0.5; 3],
            gated_stmt_prob: vec![0.5; 3],
            gate_open: false,
        };
        let cfg = ModelConfig { gating_mode: GatingMode::Hard, ..Default::default() };
        let l = loss(&out, &[1, 0, 1], true, &cfg).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits_give_zero_loss() {
        let out = ModelOutput {
            func_logits: Some([-60.0, 60.0]),
            stmt_logits: array![[60.0, -60.0], [-60.0, 60.0]],
            func_prob_vul: 1.0,
            stmt_prob_vul: vec![0.0, 1.0],
            gated_stmt_prob: vec![0.0, 1.0],
            gate_open: true,
        };
        for mode in [GatingMode::Hard, GatingMode::Soft] {
            let cfg = ModelConfig { gating_mode: mode, ..Default::default() };
            assert!(loss(&out, &[0, 1], true, &cfg).unwrap() < 1e-40);
        }
    }

    #[test]
    fn gates() {
        let (cfg, mut p, input) = tiny(GnnType::Gat, true, GatingMode::Hard);
        let head = p.func_head.as_mut().unwrap();
        head.w.fill(0.0);
        head.b.assign(&array![1.0, -1.0]);
        let (out, _) = forward(&p, &cfg, &input, None).unwrap();
        assert!(!out.gate_open && out.gated_stmt_prob.iter().all(|g| *g == 0.0));
        head_flip(&mut p);
        let (out, _) = forward(&p, &cfg, &input, None).unwrap();
        assert!(out.gate_open);
        assert_eq!(out.gated_stmt_prob, out.stmt_prob_vul);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = forward(&p, &cfg, &input, Some(&mut rng)).unwrap();
        for (g, s) in out.gated_stmt_prob.iter().zip(&out.stmt_prob_vul) {
            assert_eq!(*g, s * out.func_prob_vul);
        }
    }

    fn head_flip(p: &mut ModelParams) {
        p.func_head.as_mut().unwrap().b.assign(&array![-1.0, 1.0]);
    }

    #[test]
    fn dimension_errors_name_the_layer() {
        let (cfg, p, _) = tiny(GnnType::Gat, true, GatingMode::Hard);
        let input = ModelInput {
            neighbors: vec![vec![0]],
            features: Features::Dense { func: Array1::zeros(3), stmts: Array2::zeros((1, 5)) },
        };
        let err = forward(&p, &cfg, &input, None).unwrap_err().to_string();
        assert!(err.contains("statement features"), "{err}");
    }

    #[test]
    fn unk_only_statement_is_the_unk_row() {
        let (cfg, p, _) = tiny(GnnType::None, false, GatingMode::Hard);
        let table = p.token_table.clone().unwrap();
        assert_eq!(mean_rows(&table, &[0, 0, 0]), table.row(0));
        let two = mean_rows(&table, &[2, 4]);
        let expected = (&table.row(2) + &table.row(4)) / 2.0;
        assert!(two.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-15));
        let _ = cfg;
    }
}
