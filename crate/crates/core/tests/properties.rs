use std::collections::{BTreeMap, BTreeSet, VecDeque};

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stmtvd::codegraph::{build_graph_builtin, import_graph, EdgeKind, GraphExport, StatementGraph};
use stmtvd::corpus::{clean, make_random_split, strip_comments, FunctionSample};
use stmtvd::embed::{encode_trainable, token_features, EncoderConfig, Vocab};
use stmtvd::gnn::{forward, Features, GatingMode, GnnType, ModelConfig, ModelInput, ModelParams};
use stmtvd::labeler::compute_diff;
use stmtvd::synth::{generate, SynthConfig};

const BEFORE: &str = include_str!("fixtures/posix_timer_fn.before.c");
const AFTER: &str = include_str!("fixtures/posix_timer_fn.after.c");
const EXPORT: &str = include_str!("fixtures/posix_timer_fn.after_view.graph.json");

fn random_neighbors(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<Vec<usize>> {
    (0..n).map(|i| (0..n).filter(|&j| i == j || rng.gen_bool(p)).collect()).collect()
}

fn dense_input(rng: &mut ChaCha8Rng, n: usize, dim: usize, p: f64) -> ModelInput {
    ModelInput {
        neighbors: random_neighbors(rng, n, p),
        features: Features::Dense {
            func: Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0)),
            stmts: Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.0..1.0)),
        },
    }
}

fn model(rng: &mut ChaCha8Rng, gnn: GnnType, layers: usize, func: bool) -> (ModelConfig, ModelParams) {
    let cfg = ModelConfig {
        gnn_type: gnn,
        use_function_branch: func,
        input_dim: 4,
        hidden_dim: 6,
        gnn_layers: layers,
        heads: 2,
        dropout: 0.0,
        ..Default::default()
    };
    let params = ModelParams::init(&cfg, None, rng).unwrap();
    (cfg, params)
}

/// Hop distance from `i` following neighbour lists (who `i` aggregates from).
fn hops_from(neighbors: &[Vec<usize>], i: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; neighbors.len()];
    dist[i] = Some(0);
    let mut queue = VecDeque::from([i]);
    while let Some(u) = queue.pop_front() {
        for &v in &neighbors[u] {
            if dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn far_nodes_do_not_reach_the_representation(seed in any::<u64>(), layers in 1usize..=3, gat in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=9);
        let (cfg, params) = model(&mut rng, if gat { GnnType::Gat } else { GnnType::Gcn }, layers, true);
        let input = dense_input(&mut rng, n, 4, 0.25);
        let i = rng.gen_range(0..n);
        let dist = hops_from(&input.neighbors, i);
        let far: Vec<usize> = (0..n).filter(|&j| dist[j].is_none_or(|d| d > layers)).collect();
        prop_assume!(!far.is_empty());
        let (_, base) = forward(&params, &cfg, &input, None).unwrap();
        let mut moved = input.clone();
        if let Features::Dense { stmts, .. } = &mut moved.features {
            for &j in &far {
                stmts.row_mut(j).mapv_inplace(|x| x * 3.0 - 1.0);
            }
        }
        let (_, after) = forward(&params, &cfg, &moved, None).unwrap();
        let a = base.graph_output().row(i).to_owned();
        let b = after.graph_output().row(i).to_owned();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn gcn_is_permutation_equivariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=8);
        let (cfg, params) = model(&mut rng, GnnType::Gcn, 2, true);
        let input = dense_input(&mut rng, n, 4, 0.4);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // Node i of the input becomes node perm[i].
        let mut neighbors = vec![Vec::new(); n];
        for (i, list) in input.neighbors.iter().enumerate() {
            let mut mapped: Vec<usize> = list.iter().map(|&j| perm[j]).collect();
            mapped.sort_unstable();
            neighbors[perm[i]] = mapped;
        }
        let Features::Dense { func, stmts } = &input.features else { unreachable!() };
        let mut permuted = stmts.clone();
        for (i, &p) in perm.iter().enumerate() {
            permuted.row_mut(p).assign(&stmts.row(i));
        }
        let relabeled = ModelInput { neighbors, features: Features::Dense { func: func.clone(), stmts: permuted } };
        let (a, _) = forward(&params, &cfg, &input, None).unwrap();
        let (b, _) = forward(&params, &cfg, &relabeled, None).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((a.stmt_prob_vul[i] - b.stmt_prob_vul[p]).abs() <= 1e-12);
        }
        prop_assert!((a.func_prob_vul - b.func_prob_vul).abs() <= 1e-12);
    }

    #[test]
    fn mlp_only_path_ignores_edges(seed in any::<u64>(), func in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=8);
        let (cfg, params) = model(&mut rng, GnnType::None, 2, func);
        let input = dense_input(&mut rng, n, 4, 0.3);
        let mut rewired = input.clone();
        rewired.neighbors = random_neighbors(&mut rng, n, 0.8);
        let (a, _) = forward(&params, &cfg, &input, None).unwrap();
        let (b, _) = forward(&params, &cfg, &rewired, None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn soft_gate_rises_with_the_function_probability(seed in any::<u64>(), shifts in prop::collection::vec(-4.0f64..4.0, 2..6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=6);
        let (mut cfg, mut params) = model(&mut rng, GnnType::Gat, 1, true);
        cfg.gating_mode = GatingMode::Soft;
        let input = dense_input(&mut rng, n, 4, 0.3);
        let mut shifts = shifts;
        shifts.sort_by(f64::total_cmp);
        let mut last: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        for s in shifts {
            params.func_head.as_mut().unwrap().b[1] = s;
            let mut r = ChaCha8Rng::seed_from_u64(1);
            let (out, _) = forward(&params, &cfg, &input, Some(&mut r)).unwrap();
            for (g, p) in out.gated_stmt_prob.iter().zip(&out.stmt_prob_vul) {
                prop_assert!(g <= p);
            }
            if let Some((q, gated, stmt)) = &last {
                prop_assert!(out.func_prob_vul >= *q);
                prop_assert_eq!(&out.stmt_prob_vul, stmt);
                for (now, before) in out.gated_stmt_prob.iter().zip(gated) {
                    prop_assert!(now >= before);
                }
            }
            last = Some((out.func_prob_vul, out.gated_stmt_prob, out.stmt_prob_vul));
        }
    }

    #[test]
    fn hard_gate_outputs_zero_or_the_statement_probability(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=6);
        let (cfg, params) = model(&mut rng, GnnType::Gat, 2, true);
        let input = dense_input(&mut rng, n, 4, 0.3);
        let (out, _) = forward(&params, &cfg, &input, None).unwrap();
        for (g, p) in out.gated_stmt_prob.iter().zip(&out.stmt_prob_vul) {
            prop_assert!(*g == 0.0 || g == p);
            prop_assert_eq!(*g == 0.0 && *p != 0.0, !out.gate_open);
        }
    }

    #[test]
    fn export_order_does_not_move_rows(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = compute_diff(&strip_comments(BEFORE), &strip_comments(AFTER));
        let view = d.after_view();
        let export = GraphExport::from_json(EXPORT).unwrap();
        let mut shuffled = export.clone();
        shuffled.nodes.shuffle(&mut rng);
        shuffled.edges.shuffle(&mut rng);
        let a = import_graph("f", &export, &view).unwrap();
        let b = import_graph("f", &shuffled, &view).unwrap();
        prop_assert_eq!(&a, &b);
        let vocab = Vocab::build([view.as_str()], 1, 1000);
        let enc = EncoderConfig { dim: 8, ..Default::default() };
        prop_assert_eq!(token_features(&view, &a, &vocab, &enc).unwrap(), token_features(&view, &b, &vocab, &enc).unwrap());
        let table = Array2::from_shape_fn((vocab.len(), 8), |_| rng.gen_range(-1.0..1.0));
        let ea = encode_trainable(&view, &a, &vocab, &table, &enc).unwrap();
        let eb = encode_trainable(&view, &b, &vocab, &table, &enc).unwrap();
        prop_assert_eq!(ea, eb);
    }

    #[test]
    fn trainable_encoding_scales_with_the_table(seed in any::<u64>(), exp in -3i32..=3, c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let code = strip_comments(BEFORE);
        let g = build_graph_builtin("f", &code);
        let vocab = Vocab::build([code.as_str()], 1, 1000);
        let enc = EncoderConfig { dim: 6, ..Default::default() };
        let table = Array2::from_shape_fn((vocab.len(), 6), |_| rng.gen_range(-1.0..1.0));
        let base = encode_trainable(&code, &g, &vocab, &table, &enc).unwrap();
        // Powers of two scale without rounding.
        let p = 2f64.powi(exp);
        let exact = encode_trainable(&code, &g, &vocab, &(&table * p), &enc).unwrap();
        prop_assert_eq!(&exact.stmt_matrix, &(&base.stmt_matrix * p));
        prop_assert_eq!(&exact.function_vec, &(&base.function_vec * p));
        let scaled = encode_trainable(&code, &g, &vocab, &(&table * c), &enc).unwrap();
        for (x, y) in scaled.stmt_matrix.iter().zip(base.stmt_matrix.iter()) {
            prop_assert!((x - c * y).abs() <= 1e-12 * c.max(1.0));
        }
    }
}

fn graph_is_consistent(g: &StatementGraph) -> bool {
    let lines = g.lines();
    lines.windows(2).all(|w| w[0] < w[1])
        && g.edges.iter().all(|e| g.node_index(e.src_line).is_some() && g.node_index(e.dst_line).is_some())
}

fn data_edges(g: &StatementGraph) -> BTreeSet<(usize, usize)> {
    g.edges.iter().filter(|e| e.kind == EdgeKind::DataDep).map(|e| (e.src_line, e.dst_line)).collect()
}

const CALLS: &[&str] = &["update_stats(", "trace_value(", "mix_state(", "check_flags("];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_graphs_are_well_formed(seed in any::<u64>()) {
        for s in generate(&SynthConfig { n_vulnerable: 3, n_safe: 3, seed, ..Default::default() }) {
            let code = strip_comments(&s.sample.code_before);
            prop_assert!(graph_is_consistent(&build_graph_builtin("f", &code)));
        }
    }

    #[test]
    fn blanking_a_pure_call_keeps_other_data_edges(seed in any::<u64>()) {
        for s in generate(&SynthConfig { n_vulnerable: 4, n_safe: 4, filler: (4, 9), seed, ..Default::default() }) {
            let lines: Vec<&str> = s.sample.code_before.lines().collect();
            let calls: Vec<usize> = (0..lines.len())
                .filter(|&i| CALLS.iter().any(|c| lines[i].trim_start().starts_with(c)))
                .collect();
            let Some(&drop) = calls.first() else { continue };
            let blanked: Vec<&str> = lines.iter().enumerate().map(|(i, l)| if i == drop { "" } else { *l }).collect();
            let before = data_edges(&build_graph_builtin("f", &lines.join("\n")));
            let after = data_edges(&build_graph_builtin("f", &blanked.join("\n")));
            let gone = drop + 1;
            for e in before.iter().filter(|e| e.0 != gone && e.1 != gone) {
                prop_assert!(after.contains(e), "edge {:?} lost after blanking line {}", e, gone);
            }
        }
    }

    #[test]
    fn cleaning_is_idempotent_and_splits_are_pure(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples: Vec<FunctionSample> = generate(&SynthConfig { n_vulnerable: 8, n_safe: 12, seed, ..Default::default() })
            .into_iter()
            .map(|s| s.sample)
            .collect();
        for s in &mut samples {
            if rng.gen_bool(0.3) {
                s.code_before = format!("/* note\n */ {}", s.code_before);
            }
            if rng.gen_bool(0.1) {
                s.code_after = s.code_before.replace("    ", "\t");
            }
        }
        let (once, _) = clean(&samples);
        let (twice, report) = clean(&once);
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(report.kept, once.len());
        let a = make_random_split(&once, seed).unwrap();
        let b = make_random_split(&once, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let ids: BTreeMap<&str, usize> = a.train.iter().chain(&a.validation).chain(&a.test).fold(BTreeMap::new(), |mut m, id| {
            *m.entry(id.as_str()).or_insert(0) += 1;
            m
        });
        prop_assert!(ids.values().all(|c| *c == 1));
        prop_assert!(ids.keys().all(|id| once.iter().any(|s| s.id == *id)));
    }
}
