use ndarray::{s, Array2, ArrayView2, Axis};

use super::{Activation, GatLayer, GcnLayer};

/// Values kept from a GAT forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct GatCache {
    pub(crate) input: Array2<f64>,
    /// Projected node states, heads side by side.
    pub(crate) z: Array2<f64>,
    /// `[head][node][k]` attention logits before LeakyReLU, aligned with
    /// the node's neighbour list.
    pub(crate) scores: Vec<Vec<Vec<f64>>>,
    /// `[head][node][k]` attention weights.
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub(crate) pre_activation: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct GcnCache {
    /// `[node][k]` normalisation weights aligned with the neighbour list.
    pub(crate) norm: Vec<Vec<f64>>,
    pub(crate) aggregated: Array2<f64>,
    pub(crate) pre_activation: Array2<f64>,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// One attention layer: project, score neighbour pairs, softmax over each
/// node's neighbour list, aggregate, activate.
pub fn gat_forward(
    layer: &GatLayer,
    neighbors: &[Vec<usize>],
    h: ArrayView2<f64>,
    slope: f64,
    activation: Activation,
) -> (Array2<f64>, GatCache) {
    let n = h.nrows();
    let heads = layer.heads();
    let dh = layer.a_dst.ncols();
    let z = h.dot(&layer.w.t());
    let mut pre = Array2::zeros((n, heads * dh));
    let mut scores = vec![Vec::with_capacity(n); heads];
    let mut alpha = vec![Vec::with_capacity(n); heads];
    for hd in 0..heads {
        let zh = z.slice(s![.., hd * dh..(hd + 1) * dh]);
        let dst = zh.dot(&layer.a_dst.row(hd));
        let src = zh.dot(&layer.a_src.row(hd));
        for i in 0..n {
            let u: Vec<f64> = neighbors[i].iter().map(|&j| dst[i] + src[j]).collect();
            let e: Vec<f64> = u.iter().map(|&x| leaky(x, slope)).collect();
            let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = e.iter().map(|x| (x - m).exp()).collect();
            let total: f64 = ex.iter().sum();
            let a: Vec<f64> = ex.iter().map(|x| x / total).collect();
            let mut row = pre.slice_mut(s![i, hd * dh..(hd + 1) * dh]);
            for (k, &j) in neighbors[i].iter().enumerate() {
                row.scaled_add(a[k], &zh.row(j));
            }
            scores[hd].push(u);
            alpha[hd].push(a);
        }
    }
    let out = pre.mapv(|x| activation.apply(x));
    (out, GatCache { input: h.to_owned(), z, scores, alpha, pre_activation: pre })
}

/// Gradients of a GAT layer given the gradient of its output. Returns the
/// input gradient and accumulates parameter gradients into `grad`.
pub(crate) fn gat_backward(
    layer: &GatLayer,
    neighbors: &[Vec<usize>],
    cache: &GatCache,
    d_out: &Array2<f64>,
    slope: f64,
    activation: Activation,
    grad: &mut GatLayer,
) -> Array2<f64> {
    let n = d_out.nrows();
    let heads = layer.heads();
    let dh = layer.a_dst.ncols();
    let mut dpre = d_out.clone();
    dpre.zip_mut_with(&cache.pre_activation, |d, &p| *d *= activation.derivative(p));
    let mut dz = Array2::<f64>::zeros(cache.z.dim());
    for hd in 0..heads {
        let cols = s![.., hd * dh..(hd + 1) * dh];
        let zh = cache.z.slice(cols);
        let a_dst = layer.a_dst.row(hd);
        let a_src = layer.a_src.row(hd);
        let mut ds = vec![0.0; n];
        let mut dt = vec![0.0; n];
        for i in 0..n {
            let g = dpre.slice(s![i, hd * dh..(hd + 1) * dh]);
            let alpha = &cache.alpha[hd][i];
            let dalpha: Vec<f64> = neighbors[i].iter().map(|&j| g.dot(&zh.row(j))).collect();
            let weighted: f64 = alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
            for (k, &j) in neighbors[i].iter().enumerate() {
                dz.slice_mut(s![j, hd * dh..(hd + 1) * dh]).scaled_add(alpha[k], &g);
                let de = alpha[k] * (dalpha[k] - weighted);
                let du = de * if cache.scores[hd][i][k] > 0.0 { 1.0 } else { slope };
                ds[i] += du;
                dt[j] += du;
            }
        }
        let mut gd = grad.a_dst.row_mut(hd);
        for i in 0..n {
            gd.scaled_add(ds[i], &zh.row(i));
        }
        let mut gs = grad.a_src.row_mut(hd);
        for j in 0..n {
            gs.scaled_add(dt[j], &zh.row(j));
        }
        let mut dzh = dz.slice_mut(cols);
        for i in 0..n {
            dzh.row_mut(i).scaled_add(ds[i], &a_dst);
            dzh.row_mut(i).scaled_add(dt[i], &a_src);
        }
    }
    grad.w += &dz.t().dot(&cache.input);
    dz.dot(&layer.w)
}

/// Symmetric-normalised neighbour aggregation followed by a linear map.
pub fn gcn_forward(
    layer: &GcnLayer,
    neighbors: &[Vec<usize>],
    h: ArrayView2<f64>,
    activation: Activation,
) -> (Array2<f64>, GcnCache) {
    let n = h.nrows();
    let deg: Vec<f64> = neighbors.iter().map(|nb| nb.len() as f64).collect();
    let mut agg = Array2::zeros((n, h.ncols()));
    let mut norm = Vec::with_capacity(n);
    for i in 0..n {
        let w: Vec<f64> = neighbors[i].iter().map(|&j| 1.0 / (deg[i] * deg[j]).sqrt()).collect();
        for (k, &j) in neighbors[i].iter().enumerate() {
            agg.row_mut(i).scaled_add(w[k], &h.row(j));
        }
        norm.push(w);
    }
    let pre = agg.dot(&layer.w.t());
    let out = pre.mapv(|x| activation.apply(x));
    (out, GcnCache { norm, aggregated: agg, pre_activation: pre })
}

pub(crate) fn gcn_backward(
    layer: &GcnLayer,
    neighbors: &[Vec<usize>],
    cache: &GcnCache,
    d_out: &Array2<f64>,
    activation: Activation,
    grad: &mut GcnLayer,
) -> Array2<f64> {
    let mut dpre = d_out.clone();
    dpre.zip_mut_with(&cache.pre_activation, |d, &p| *d *= activation.derivative(p));
    grad.w += &dpre.t().dot(&cache.aggregated);
    let dagg = dpre.dot(&layer.w);
    let mut dh = Array2::zeros(dagg.dim());
    for (i, nb) in neighbors.iter().enumerate() {
        for (k, &j) in nb.iter().enumerate() {
            dh.row_mut(j).scaled_add(cache.norm[i][k], &dagg.row(i));
        }
    }
    dh
}

/// Dense evaluation of the attention layer from the adjacency matrix, one
/// pair at a time. Returns the outputs and the dense attention matrices
/// (one per head).
pub fn dense_gat_reference(
    layer: &GatLayer,
    adjacency: &Array2<bool>,
    h: &Array2<f64>,
    slope: f64,
    activation: Activation,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let n = h.nrows();
    let heads = layer.heads();
    let dh = layer.a_dst.ncols();
    let mut out = Array2::zeros((n, heads * dh));
    let mut attn = Vec::new();
    for hd in 0..heads {
        let wh = layer.w.slice(s![hd * dh..(hd + 1) * dh, ..]);
        let mut z = Array2::<f64>::zeros((n, dh));
        for i in 0..n {
            for r in 0..dh {
                z[[i, r]] = (0..h.ncols()).map(|c| wh[[r, c]] * h[[i, c]]).sum();
            }
        }
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            let mut e = vec![None; n];
            for j in 0..n {
                if adjacency[[i, j]] {
                    let mut v = 0.0;
                    for r in 0..dh {
                        v += layer.a_dst[[hd, r]] * z[[i, r]] + layer.a_src[[hd, r]] * z[[j, r]];
                    }
                    e[j] = Some(if v > 0.0 { v } else { slope * v });
                }
            }
            let m = e.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = e.iter().flatten().map(|x| (x - m).exp()).sum();
            for j in 0..n {
                if let Some(v) = e[j] {
                    a[[i, j]] = (v - m).exp() / total;
                }
            }
            for r in 0..dh {
                let v: f64 = (0..n).map(|j| a[[i, j]] * z[[j, r]]).sum();
                out[[i, hd * dh + r]] = activation.apply(v);
            }
        }
        attn.push(a);
    }
    (out, attn)
}

/// Dense `act(Â H Wᵀ)` with `Â_ij = 1/sqrt(deg_i deg_j)` on edges.
pub fn dense_gcn_reference(layer: &GcnLayer, adjacency: &Array2<bool>, h: &Array2<f64>, activation: Activation) -> Array2<f64> {
    let n = h.nrows();
    let deg: Vec<f64> = (0..n).map(|i| adjacency.row(i).iter().filter(|b| **b).count() as f64).collect();
    let a_hat = Array2::from_shape_fn((n, n), |(i, j)| {
        if adjacency[[i, j]] {
            1.0 / (deg[i] * deg[j]).sqrt()
        } else {
            0.0
        }
    });
    a_hat.dot(h).dot(&layer.w.t()).mapv(|x| activation.apply(x))
}

/// Row `i` lists `j` when `adjacency[i][j]`.
pub fn adjacency_to_neighbors(adjacency: &Array2<bool>) -> Vec<Vec<usize>> {
    adjacency
        .axis_iter(Axis(0))
        .map(|row| row.iter().enumerate().filter(|(_, b)| **b).map(|(j, _)| j).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn singleton_identity_passes_input_through() {
        let layer = GatLayer { w: Array2::eye(3), a_dst: Array2::zeros((1, 3)), a_src: Array2::zeros((1, 3)) };
        let h = array![[0.5, -2.0, 3.0]];
        let (out, cache) = gat_forward(&layer, &[vec![0]], h.view(), 0.2, Activation::Identity);
        assert_eq!(out, h);
        assert_eq!(cache.alpha[0][0], [1.0]);
        let gcn = GcnLayer { w: Array2::eye(3) };
        assert_eq!(gcn_forward(&gcn, &[vec![0]], h.view(), Activation::Identity).0, h);
    }

    #[test]
    fn identical_neighbours_share_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = GatLayer { w: rand_mat(&mut rng, 2, 2), a_dst: rand_mat(&mut rng, 1, 2), a_src: rand_mat(&mut rng, 1, 2) };
        let h = array![[1.0, 2.0], [0.3, 0.1], [0.3, 0.1]];
        let (_, cache) = gat_forward(&layer, &[vec![1, 2], vec![1], vec![2]], h.view(), 0.2, Activation::Relu);
        assert_eq!(cache.alpha[0][0], [0.5, 0.5]);
        let gcn = GcnLayer { w: rand_mat(&mut rng, 2, 2) };
        let (out, _) = gcn_forward(&gcn, &[vec![0, 1], vec![0, 1]], array![[0.2, 0.4], [0.2, 0.4]].view(), Activation::Relu);
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn chain_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = GatLayer { w: rand_mat(&mut rng, 4, 3), a_dst: rand_mat(&mut rng, 2, 2), a_src: rand_mat(&mut rng, 2, 2) };
        let adj = array![[true, false, false], [true, true, false], [false, true, true]];
        let h = rand_mat(&mut rng, 3, 3);
        let (fast, _) = gat_forward(&layer, &adjacency_to_neighbors(&adj), h.view(), 0.2, Activation::Relu);
        let (dense, _) = dense_gat_reference(&layer, &adj, &h, 0.2, Activation::Relu);
        assert!((&fast - &dense).iter().all(|d| d.abs() <= 1e-12));
    }
}
