mod common;

use std::collections::HashMap;

use adamore::autodiff::{ParamStore, Tape};
use adamore::eval::{ari, clustering_accuracy, nmi, oracle_weights, prototype_fewshot, OracleWeightSpec};
use adamore::filters::{apply_filter, parse_specs, FilterSpec, WeightedView};
use adamore::fusion::{fuse, fusion_state, WeightStatistic};
use adamore::graph::{clustering_coefficient, local_homophily, make_splits, node_descriptor, normalize, structural_embeddings, Graph};
use adamore::moe::{backbone_forward, cka_value, enhance, residual_forward, Channel, ExpertBank, ResidualPool};
use adamore::trainer::{GraphContext, MaskPlan, TrainConfig, TrainState};
use adamore::views::{build_views, edge_logits, gumbel_sigmoid_weights, svg_loss, EdgeGateParams};
use adamore::{Matrix, SessionRng};
use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn graph_from(seed: u64, n: usize, p: f64, f: usize) -> Graph {
    let mut rng = SessionRng::seed_from_u64(seed);
    common::random_graph(n, p, f, &mut rng)
}

fn labelled(g: &Graph, n_classes: usize, seed: u64) -> Graph {
    let mut rng = SessionRng::seed_from_u64(seed ^ 0x5eed);
    let labels = (0..g.n_nodes()).map(|_| rng.random_range(0..n_classes)).collect();
    g.with_labels(labels).expect("labels in range")
}

fn dense_adjacency(g: &Graph) -> Array2<f64> {
    g.adjacency().to_dense(&vec![1.0; g.n_edges()])
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn filter_value(g: &Graph, spec: &FilterSpec, w: &[f64], h: &Matrix) -> Matrix {
    let mut tape = Tape::new();
    let view = WeightedView::fixed(&mut tape, g.adjacency(), w).unwrap();
    let x = tape.constant(h.clone());
    let out = apply_filter(&mut tape, spec, x, &view).unwrap();
    tape.value(out).clone()
}

fn tiny_context(seed: u64) -> (GraphContext, TrainConfig) {
    let g = adamore::graph::gen_sbm(&adamore::graph::SbmConfig {
        n_per_block: 10,
        feat_dim: 6,
        seed,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        hidden: 8,
        epochs: 3,
        lr: 1e-2,
        gate_hidden: 8,
        seed,
        ..TrainConfig::default()
    };
    let ctx = GraphContext::new(&g, &cfg).unwrap();
    (ctx, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalization_round_trips(seed in any::<u64>(), n in 1usize..20, p in 0.0f64..0.8) {
        let g = graph_from(seed, n, p, 1);
        let ops = normalize(&g);
        let tilde = ops.a_tilde.to_dense();
        let hat = ops.a_hat.to_dense();
        for i in 0..n {
            for j in 0..n {
                let back = ops.d_hat[i].sqrt() * tilde[[i, j]] * ops.d_hat[j].sqrt();
                prop_assert!((back - hat[[i, j]]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn homophily_and_clustering_match_brute_force(seed in any::<u64>(), n in 1usize..=12, p in 0.0f64..0.9, k in 1usize..4) {
        let g = labelled(&graph_from(seed, n, p, 1), k, seed);
        let a = dense_adjacency(&g);
        let labels = g.labels().unwrap();
        let hom = local_homophily(&g).unwrap();
        let cc = clustering_coefficient(&g);
        for i in 0..n {
            let deg: f64 = a.row(i).sum();
            let same: f64 = (0..n).filter(|&j| labels[j] == labels[i]).map(|j| a[[i, j]]).sum();
            let want_hom = if deg == 0.0 { -1.0 } else { same / deg };
            prop_assert!((hom[i] - want_hom).abs() <= 1e-12);
            let mut closed = 0.0;
            for j in 0..n {
                for l in 0..n {
                    closed += a[[i, j]] * a[[j, l]] * a[[l, i]];
                }
            }
            let want_cc = if deg < 2.0 { 0.0 } else { closed / (deg * (deg - 1.0)) };
            prop_assert!((cc[i] - want_cc).abs() <= 1e-12);
        }
    }

    #[test]
    fn splits_are_disjoint_and_seeded(seed in any::<u64>(), n in 20usize..60) {
        let g = labelled(&graph_from(seed, n, 0.1, 1), 2, seed);
        let a = make_splits(&g, (0.5, 0.2, 0.3), seed);
        let b = make_splits(&g, (0.5, 0.2, 0.3), seed);
        prop_assert_eq!(&a.as_ref().ok(), &b.as_ref().ok());
        if let Ok(sp) = a {
            let mut seen = vec![false; n];
            for &i in sp.train.iter().chain(&sp.val).chain(&sp.test) {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
    }

    #[test]
    fn filters_are_linear(seed in any::<u64>(), n in 2usize..16, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = graph_from(seed, n, 0.4, 1);
        let mut rng = SessionRng::seed_from_u64(seed);
        let w: Vec<f64> = (0..g.n_edges()).map(|_| rng.random::<f64>()).collect();
        let h1 = common::randn(n, 3, &mut rng);
        let h2 = common::randn(n, 3, &mut rng);
        let specs = parse_specs("sgc:2,lapsgc:2:0.7,freelpf:1,freehpf:1,splinelp:1,splinehp:2").unwrap();
        for spec in &specs {
            let mixed = filter_value(&g, spec, &w, &(&h1 * a + &h2 * b));
            let split = filter_value(&g, spec, &w, &h1) * a + filter_value(&g, spec, &w, &h2) * b;
            prop_assert!(max_abs_diff(&mixed, &split) <= 1e-10, "{spec}");
        }
    }

    #[test]
    fn unit_weights_match_the_raw_graph(seed in any::<u64>(), n in 1usize..16, k in 0usize..4) {
        let g = graph_from(seed, n, 0.3, 1);
        let mut rng = SessionRng::seed_from_u64(seed);
        let h = common::randn(n, 2, &mut rng);
        let got = filter_value(&g, &FilterSpec::sgc(k), &vec![1.0; g.n_edges()], &h);
        let tilde = normalize(&g).a_tilde.to_dense();
        let mut want = h;
        for _ in 0..k {
            want = tilde.dot(&want);
        }
        prop_assert!(max_abs_diff(&got, &want) <= 1e-10);
    }

    #[test]
    fn views_complement_exactly(seed in any::<u64>(), n in 2usize..16) {
        let g = graph_from(seed, n, 0.5, 1);
        let mut rng = SessionRng::seed_from_u64(seed);
        let w = common::uniform(g.n_edges(), 1, 0.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let wv = tape.variable(w);
        let views = build_views(&mut tape, g.adjacency(), wv).unwrap();
        let (coh, disp) = views.dense(&tape);
        prop_assert_eq!(&coh + &disp, dense_adjacency(&g));
    }

    #[test]
    fn eval_weights_sharpen_as_temperature_drops(logit in prop_oneof![-6.0f64..-1e-3, 1e-3f64..6.0]) {
        let mut rng = SessionRng::seed_from_u64(0);
        let at = |tau: f64, rng: &mut SessionRng| {
            let mut tape = Tape::new();
            let l = tape.constant(Array2::from_elem((1, 1), logit));
            let w = gumbel_sigmoid_weights(&mut tape, l, tau, rng, false).unwrap();
            tape.value(w)[[0, 0]]
        };
        let dist: Vec<f64> = [1.0, 0.5, 0.1].iter().map(|&t| {
            let w = at(t, &mut rng);
            (w - w.round()).abs()
        }).collect();
        prop_assert!(dist[0] >= dist[1] && dist[1] >= dist[2], "{dist:?}");
        prop_assert_eq!(at(0.5, &mut rng), at(0.5, &mut rng));
    }

    #[test]
    fn selected_gates_sum_to_one(seed in any::<u64>(), n in 2usize..20, k in 1usize..=4) {
        let g = graph_from(seed, n, 0.3, 4);
        let mut rng = SessionRng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let specs: Vec<FilterSpec> = (1..=4).map(FilterSpec::sgc).collect();
        let bank = ExpertBank::new(&mut store, Channel::Coh, specs, k, 4, 4, 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(g.features().clone());
        let view = WeightedView::unweighted(&mut tape, g.adjacency()).unwrap();
        let out = backbone_forward(&mut tape, &store, &bank, x, x, &view, false).unwrap();
        for row in tape.value(out.gates).rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-10);
            prop_assert_eq!(row.iter().filter(|&&v| v > 0.0).count(), k);
        }
        prop_assert!((out.stats.f.iter().sum::<f64>() - k as f64).abs() <= 1e-10);
        prop_assert!(out.stats.p.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn cka_is_bounded_and_symmetric(seed in any::<u64>(), n in 3usize..20, da in 1usize..5, db in 1usize..5) {
        let mut rng = SessionRng::seed_from_u64(seed);
        let a = common::randn(n, da, &mut rng);
        let b = common::randn(n, db, &mut rng);
        let ab = cka_value(&a, &b).unwrap();
        let ba = cka_value(&b, &a).unwrap();
        prop_assert!((0.0..=1.0 + 1e-9).contains(&ab));
        prop_assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn alpha_stays_in_unit_interval(seed in any::<u64>(), n in 1usize..20, p in 0.0f64..0.7) {
        let g = graph_from(seed, n, p, 1);
        let mut rng = SessionRng::seed_from_u64(seed);
        let h = common::randn(n, 3, &mut rng);
        let w: Vec<f64> = (0..g.n_edges()).map(|_| rng.random::<f64>()).collect();
        for stat in [WeightStatistic::Mean, WeightStatistic::Variance] {
            let st = fusion_state(&h, &w, &g, &normalize(&g), stat);
            prop_assert!(st.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
        }
    }

    #[test]
    fn fusion_is_linear_per_channel(seed in any::<u64>(), n in 1usize..12, a in -2.0f64..2.0) {
        let mut rng = SessionRng::seed_from_u64(seed);
        let (c1, c2, d) = (common::randn(n, 2, &mut rng), common::randn(n, 2, &mut rng), common::randn(n, 2, &mut rng));
        let alpha: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let run = |c: &Matrix, d: &Matrix, alpha: &[f64]| {
            let mut tape = Tape::new();
            let (c, d) = (tape.constant(c.clone()), tape.constant(d.clone()));
            let f = fuse(&mut tape, c, d, alpha).unwrap();
            tape.value(f).clone()
        };
        let zero = Array2::zeros((n, 2));
        let mixed = run(&(&c1 + &(&c2 * a)), &zero, &alpha);
        let split = run(&c1, &zero, &alpha) + run(&c2, &zero, &alpha) * a;
        prop_assert!(max_abs_diff(&mixed, &split) <= 1e-12);

        let only_coh = run(&c1, &d, &vec![1.0; n]);
        prop_assert_eq!(only_coh.slice(s![.., ..2]).to_owned(), c1.clone());
        prop_assert!(only_coh.slice(s![.., 2..]).iter().all(|&v| v == 0.0));
        let half = run(&c1, &d, &vec![0.5; n]);
        prop_assert_eq!(half.slice(s![.., 2..]).to_owned(), &d * 0.5);
    }

    #[test]
    fn optimal_assignment_beats_every_permutation(seed in any::<u64>(), n in 1usize..40, k in 1usize..=5) {
        let mut rng = SessionRng::seed_from_u64(seed);
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let acc = clustering_accuracy(&pred, &truth);
        let mut best: f64 = 0.0;
        for perm in permutations(k) {
            let hits = pred.iter().zip(&truth).filter(|(p, t)| perm[**p] == **t).count();
            best = best.max(hits as f64 / n as f64);
        }
        prop_assert!((acc - best).abs() <= 1e-12, "hungarian {acc} brute force {best}");
    }

    #[test]
    fn nmi_and_ari_match_counting_formulas(seed in any::<u64>(), n in 2usize..50, kp in 1usize..5, kt in 1usize..5) {
        let mut rng = SessionRng::seed_from_u64(seed);
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..kp)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..kt)).collect();
        prop_assert!((nmi(&pred, &truth) - brute_nmi(&pred, &truth)).abs() <= 1e-10);
        prop_assert!((ari(&pred, &truth) - brute_ari(&pred, &truth)).abs() <= 1e-10);
        prop_assert!((0.0..=1.0).contains(&nmi(&pred, &truth)));
        prop_assert!((-1.0..=1.0).contains(&ari(&pred, &truth)));
    }

    #[test]
    fn full_support_is_nearest_centroid(seed in any::<u64>(), n in 4usize..30, k in 2usize..4) {
        let mut rng = SessionRng::seed_from_u64(seed);
        let x = common::randn(n, 3, &mut rng);
        let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        let all: Vec<usize> = (0..n).collect();
        let acc = prototype_fewshot(&x, &labels, &all, &all).unwrap();
        let mut centroid = Array2::<f64>::zeros((k, 3));
        let mut count = vec![0.0; k];
        for i in 0..n {
            centroid.row_mut(labels[i]).scaled_add(1.0, &x.row(i));
            count[labels[i]] += 1.0;
        }
        for c in 0..k {
            centroid.row_mut(c).mapv_inplace(|v| v / count[c]);
        }
        let hits = (0..n)
            .filter(|&i| {
                let d: Vec<f64> = (0..k).map(|c| (&centroid.row(c) - &x.row(i)).mapv(|v| v * v).sum()).collect();
                let best = (0..k).fold(0, |b, c| if d[c] < d[b] { c } else { b });
                best == labels[i]
            })
            .count();
        prop_assert!((acc - hits as f64 / n as f64).abs() <= 1e-12);
    }

    #[test]
    fn homophilic_oracle_routes_everything_cohesive(seed in any::<u64>(), blocks in 1usize..5, size in 2usize..6) {
        let mut edges = Vec::new();
        let mut labels = Vec::new();
        for b in 0..blocks {
            for i in 0..size {
                labels.push(b);
                for j in i + 1..size {
                    edges.push((b * size + i, b * size + j));
                }
            }
        }
        let g = Graph::new(edges, Array2::zeros((blocks * size, 1)), Some(labels)).unwrap();
        let w = oracle_weights(&g, &OracleWeightSpec::distinct(1.0, 0.0), seed).unwrap();
        prop_assert!(w.iter().all(|&v| v == 1.0));
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn brute_entropy(xs: &[usize]) -> f64 {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for &x in xs {
        *counts.entry(x).or_default() += 1.0;
    }
    let n = xs.len() as f64;
    counts.values().map(|c| -(c / n) * (c / n).ln()).sum()
}

fn brute_nmi(a: &[usize], b: &[usize]) -> f64 {
    let (ha, hb) = (brute_entropy(a), brute_entropy(b));
    if ha <= 0.0 || hb <= 0.0 {
        return 0.0;
    }
    let joint: Vec<usize> = a.iter().zip(b).map(|(x, y)| x * 1000 + y).collect();
    let mi = ha + hb - brute_entropy(&joint);
    (mi / (0.5 * (ha + hb))).clamp(0.0, 1.0)
}

/// Rand index adjusted by pair counting over all `n(n-1)/2` pairs.
fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut in_a, mut in_b, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            pairs += 1.0;
            in_a += f64::from(u8::from(sa));
            in_b += f64::from(u8::from(sb));
            both += f64::from(u8::from(sa && sb));
        }
    }
    let expected = in_a * in_b / pairs;
    let max = 0.5 * (in_a + in_b);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

#[test]
fn svg_loss_leaves_backbone_gradients_at_zero() {
    let mut rng = SessionRng::seed_from_u64(11);
    let g = common::random_graph(14, 0.3, 4, &mut rng);
    let ops = normalize(&g);
    let structural = structural_embeddings(&ops, 4).unwrap();
    let desc = node_descriptor(g.features(), &structural);
    let mut store = ParamStore::new();
    let gate = EdgeGateParams::new(&mut store, desc.ncols(), 6, &mut rng);
    let coh_bank = ExpertBank::new(&mut store, Channel::Coh, (1..=3).map(FilterSpec::sgc).collect(), 2, 4, desc.ncols(), 5, &mut rng).unwrap();
    let disp_specs = parse_specs("lapsgc:1,lapsgc:2,lapsgc:3").unwrap();
    let disp_bank = ExpertBank::new(&mut store, Channel::Disp, disp_specs, 2, 4, desc.ncols(), 5, &mut rng).unwrap();

    let mut tape = Tape::new();
    let d = tape.constant(desc);
    let logits = edge_logits(&mut tape, &store, &gate, g.adjacency(), d, true).unwrap();
    let w = gumbel_sigmoid_weights(&mut tape, logits, 0.5, &mut rng, true).unwrap();
    let views = build_views(&mut tape, g.adjacency(), w).unwrap();
    let x = tape.constant(g.features().clone());
    // Backbones share the tape and are trainable, so only svg_loss itself
    // can keep gradients away from them.
    let hc = backbone_forward(&mut tape, &store, &coh_bank, x, d, &views.coh, true).unwrap();
    let hd = backbone_forward(&mut tape, &store, &disp_bank, x, d, &views.disp, true).unwrap();
    let (hc, hd) = (tape.value(hc.h_b).clone(), tape.value(hd.h_b).clone());
    let loss = svg_loss(&mut tape, &views, &hc, &hd, 1.0).unwrap();
    tape.backward(loss.total).unwrap();
    store.zero_grads();
    tape.accumulate_grads(&mut store);

    for id in coh_bank.ids().into_iter().chain(disp_bank.ids()) {
        assert!(store.grad(id).iter().all(|&v| v == 0.0), "{} received gradient", store.name(id));
    }
    assert!(store.grad_norm_sq(&gate.ids()) > 0.0);
}

#[test]
fn empty_residual_pool_leaves_backbone_untouched() {
    let mut rng = SessionRng::seed_from_u64(12);
    let g = common::random_graph(10, 0.4, 3, &mut rng);
    let mut store = ParamStore::new();
    let bank = ExpertBank::new(&mut store, Channel::Coh, (1..=2).map(FilterSpec::sgc).collect(), 1, 3, 3, 4, &mut rng).unwrap();
    let pool = ResidualPool::new(&mut store, Channel::Coh, &[], 3, 4, &mut rng);
    let mut tape = Tape::new();
    let x = tape.constant(g.features().clone());
    let view = WeightedView::unweighted(&mut tape, g.adjacency()).unwrap();
    let b = backbone_forward(&mut tape, &store, &bank, x, x, &view, true).unwrap();
    let r = residual_forward(&mut tape, &store, &pool, x, &view, true).unwrap();
    assert!(r.h_r.is_none());
    let h = enhance(&mut tape, b.h_b, r.h_r).unwrap();
    let (hv, bv) = (tape.value(h), tape.value(b.h_b));
    assert!(hv.iter().zip(bv).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn parameter_groups_are_disjoint() {
    let (ctx, cfg) = tiny_context(1);
    let st = TrainState::new(&ctx, cfg).unwrap();
    let view = st.model.view_group();
    let main = st.model.main_group();
    assert!(!view.is_empty() && !main.is_empty());
    assert!(view.iter().all(|v| !main.contains(v)));
}

#[test]
fn masked_rows_never_reach_the_forward_pass() {
    let (ctx, cfg) = tiny_context(2);
    let mut st = TrainState::new(&ctx, cfg.clone()).unwrap();
    st.fit(&ctx).unwrap();
    let mut rng = SessionRng::seed_from_u64(3);
    let mask = MaskPlan::sample(ctx.n_nodes(), cfg.mask_ratio, &mut rng).unwrap();
    assert_eq!(mask.len(), (cfg.mask_ratio * ctx.n_nodes() as f64).round() as usize);
    let clean = st.probe_masked_loss(&ctx, ctx.graph.features(), &mask).unwrap();
    let mut poisoned = ctx.graph.features().clone();
    for &i in mask.nodes.iter() {
        poisoned.row_mut(i).fill(f64::NAN);
    }
    let dirty = st.probe_masked_loss(&ctx, &poisoned, &mask).unwrap();
    assert!(dirty.is_finite());
    assert_eq!(clean.to_bits(), dirty.to_bits());
}

#[test]
fn runs_replay_bit_for_bit() {
    let (ctx, cfg) = tiny_context(4);
    let reference = {
        let mut st = TrainState::new(&ctx, cfg.clone()).unwrap();
        st.fit(&ctx).unwrap().to_vec()
    };
    assert_eq!(reference.len(), cfg.epochs);
    for _ in 0..9 {
        let mut st = TrainState::new(&ctx, cfg.clone()).unwrap();
        let again = st.fit(&ctx).unwrap();
        let same = reference.iter().zip(again).all(|(a, b)| {
            [a.l_mae, a.l_load, a.l_div, a.l_svg, a.total]
                .iter()
                .zip([b.l_mae, b.l_load, b.l_div, b.l_svg, b.total])
                .all(|(x, y)| x.to_bits() == y.to_bits())
        });
        assert!(same);
    }
}

#[test]
fn zero_diversity_weight_drops_the_term() {
    let (ctx, cfg) = tiny_context(5);
    let cfg = TrainConfig {
        lambda_div: 0.0,
        ..cfg
    };
    let mut st = TrainState::new(&ctx, cfg.clone()).unwrap();
    for r in st.fit(&ctx).unwrap() {
        assert!(r.l_div > 0.0);
        assert_eq!(r.total, r.l_mae + cfg.lambda_load * r.l_load);
    }
}

#[test]
fn eval_weights_are_repeatable() {
    let (ctx, cfg) = tiny_context(6);
    let mut st = TrainState::new(&ctx, cfg).unwrap();
    st.fit(&ctx).unwrap();
    let a = st.eval_weights(&ctx).unwrap();
    let b = st.eval_weights(&ctx).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|w| (0.0..=1.0).contains(w)));
}
