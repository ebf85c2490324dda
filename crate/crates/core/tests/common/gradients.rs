use std::sync::Arc;

use adamore::autodiff::{ParamStore, Tape, Var};
use adamore::filters::{apply_filter, FilterSpec, WeightedView};
use adamore::fusion::fuse;
use adamore::graph::{normalize, structural_embeddings, node_descriptor};
use adamore::loss::{cross_entropy, scaled_cosine_error};
use adamore::moe::{
    backbone_forward, diversity_loss, enhance, load_balance_loss, residual_forward, Channel,
    ExpertBank, ExpertKind, ResidualPool,
};
use adamore::sparse::CsrMatrix;
use adamore::trainer::{mae_loss, Decoder, MaskPlan};
use adamore::views::{build_views, edge_logits, gumbel_sigmoid_weights, svg_loss, EdgeGateParams};
use adamore::{Result, SessionRng};
use rand::{Rng, SeedableRng};

use super::{away_from_zero, check_op, check_store, randn, random_graph, uniform};

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn case(name: &'static str, inputs: Vec<ndarray::Array2<f64>>, f: OpFn) -> (&'static str, Vec<ndarray::Array2<f64>>, OpFn) {
    (name, inputs, f)
}

/// Worst relative error of every tape operation.
pub fn op_gradient_errors() -> Result<Vec<(&'static str, f64)>> {
    let mut rng = SessionRng::seed_from_u64(11);
    let r = &mut rng;
    let g = random_graph(7, 0.5, 2, r);
    let adj = Arc::clone(g.adjacency());
    let m = adj.n_edges();
    let csr = {
        let mut trip = Vec::new();
        for i in 0..4 {
            for j in 0..3 {
                if r.random::<f64>() < 0.6 {
                    trip.push((i, j, r.random_range(-1.0..1.0)));
                }
            }
        }
        Arc::new(CsrMatrix::from_triplets(4, 3, &trip))
    };
    let rows = Arc::new(vec![2usize, 0, 2, 3]);
    let targets = Arc::new(vec![1usize, 0, 1, 2, 0]);
    let mask = Arc::new(vec![true, false, true, true, false, true, true, true, false]);

    let cases: Vec<(&'static str, Vec<ndarray::Array2<f64>>, OpFn)> = vec![
        case("matmul", vec![randn(3, 4, r), randn(4, 2, r)], Box::new(|t, v| t.matmul(v[0], v[1]))),
        case("spmm", vec![randn(3, 2, r)], {
            let csr = Arc::clone(&csr);
            Box::new(move |t, v| t.spmm(&csr, v[0]))
        }),
        case("edge_spmm", vec![uniform(m, 1, 0.1, 1.0, r), randn(7, 3, r)], {
            let adj = Arc::clone(&adj);
            Box::new(move |t, v| t.edge_spmm(&adj, v[0], v[1]))
        }),
        case("transpose", vec![randn(3, 2, r)], Box::new(|t, v| t.transpose(v[0]))),
        case("trace", vec![randn(3, 3, r)], Box::new(|t, v| t.trace(v[0]))),
        case("frob_inner", vec![randn(3, 2, r), randn(3, 2, r)], Box::new(|t, v| t.frob_inner(v[0], v[1]))),
        case("center_cols", vec![randn(4, 3, r)], Box::new(|t, v| t.center_cols(v[0]))),
        case("add", vec![randn(2, 3, r), randn(2, 3, r)], Box::new(|t, v| t.add(v[0], v[1]))),
        case("sub", vec![randn(2, 3, r), randn(2, 3, r)], Box::new(|t, v| t.sub(v[0], v[1]))),
        case("mul", vec![randn(2, 3, r), randn(2, 3, r)], Box::new(|t, v| t.mul(v[0], v[1]))),
        case("div", vec![randn(2, 3, r), away_from_zero(2, 3, 0.5, 2.0, r)], Box::new(|t, v| t.div(v[0], v[1]))),
        case("scale", vec![randn(2, 3, r)], Box::new(|t, v| t.scale(v[0], -1.7))),
        case("shift", vec![randn(2, 3, r)], Box::new(|t, v| t.shift(v[0], 0.3))),
        case("one_minus", vec![randn(2, 3, r)], Box::new(|t, v| t.one_minus(v[0]))),
        case("scale_by", vec![randn(1, 1, r), randn(3, 2, r)], Box::new(|t, v| t.scale_by(v[0], v[1]))),
        case("mul_col", vec![randn(3, 4, r), randn(3, 1, r)], Box::new(|t, v| t.mul_col(v[0], v[1]))),
        case("add_row", vec![randn(3, 4, r), randn(1, 4, r)], Box::new(|t, v| t.add_row(v[0], v[1]))),
        case("sigmoid", vec![randn(3, 3, r)], Box::new(|t, v| t.sigmoid(v[0]))),
        case("tanh", vec![randn(3, 3, r)], Box::new(|t, v| t.tanh(v[0]))),
        case("relu", vec![away_from_zero(3, 3, 0.1, 2.0, r)], Box::new(|t, v| t.relu(v[0]))),
        case("leaky_relu", vec![away_from_zero(3, 3, 0.1, 2.0, r)], Box::new(|t, v| t.leaky_relu(v[0], 0.2))),
        case("exp", vec![randn(3, 3, r)], Box::new(|t, v| t.exp(v[0]))),
        case("log", vec![uniform(3, 3, 0.2, 3.0, r)], Box::new(|t, v| t.log(v[0]))),
        case("pow_integer", vec![randn(3, 3, r)], Box::new(|t, v| t.pow(v[0], 3.0))),
        case("pow_inverse_sqrt", vec![uniform(3, 3, 0.2, 3.0, r)], Box::new(|t, v| t.pow(v[0], -0.5))),
        case("pow_signed", vec![away_from_zero(3, 3, 0.2, 2.0, r)], Box::new(|t, v| t.pow(v[0], 1.5))),
        case("sum", vec![randn(3, 2, r)], Box::new(|t, v| t.sum(v[0]))),
        case("mean", vec![randn(3, 2, r)], Box::new(|t, v| t.mean(v[0]))),
        case("row_means", vec![randn(3, 4, r)], Box::new(|t, v| t.row_means(v[0]))),
        case("col_means", vec![randn(3, 4, r)], Box::new(|t, v| t.col_means(v[0]))),
        case("row_sums", vec![randn(3, 4, r)], Box::new(|t, v| t.row_sums(v[0]))),
        case("softmax", vec![randn(3, 4, r)], Box::new(|t, v| t.softmax(v[0]))),
        case("log_softmax", vec![randn(3, 4, r)], Box::new(|t, v| t.log_softmax(v[0]))),
        case("masked_softmax", vec![randn(3, 3, r)], {
            let mask = Arc::clone(&mask);
            Box::new(move |t, v| t.masked_softmax(v[0], Arc::clone(&mask)))
        }),
        case("hconcat", vec![randn(3, 2, r), randn(3, 1, r)], Box::new(|t, v| t.hconcat(&[v[0], v[1], v[0]]))),
        case("vconcat", vec![randn(2, 3, r), randn(1, 3, r)], Box::new(|t, v| t.vconcat(&[v[1], v[0]]))),
        case("gather_rows", vec![randn(4, 3, r)], {
            let rows = Arc::clone(&rows);
            Box::new(move |t, v| t.gather_rows(v[0], Arc::clone(&rows)))
        }),
        case("select_rows", vec![randn(4, 3, r)], Box::new(|t, v| t.select_rows(v[0], &[3, 1]))),
        case("scatter_add_rows", vec![randn(5, 2, r)], {
            let targets = Arc::clone(&targets);
            Box::new(move |t, v| t.scatter_add_rows(v[0], Arc::clone(&targets), 4))
        }),
        case("select_col", vec![randn(3, 4, r)], Box::new(|t, v| t.select_col(v[0], 2))),
        case("replace_rows", vec![randn(4, 3, r), randn(1, 3, r)], Box::new(|t, v| {
            t.replace_rows(v[0], v[1], Arc::new(vec![1, 3]))
        })),
        case("row_normalize", vec![randn(3, 4, r)], Box::new(|t, v| t.row_normalize(v[0]))),
        case("row_cosine", vec![randn(3, 4, r), randn(3, 4, r)], Box::new(|t, v| t.row_cosine(v[0], v[1]))),
        case("scaled_cosine_error", vec![randn(4, 3, r), randn(4, 3, r)], Box::new(|t, v| {
            scaled_cosine_error(t, v[0], v[1], 2.0)
        })),
        case("cross_entropy", vec![randn(4, 3, r)], Box::new(|t, v| cross_entropy(t, v[0], &[0, 2, 1, 2]))),
        case("cka", vec![randn(5, 3, r), randn(5, 2, r)], Box::new(|t, v| adamore::moe::cka(t, v[0], v[1]))),
        case("arc_spmm", vec![randn(6, 1, r), randn(4, 3, r)], Box::new(|t, v| {
            let arcs = Arc::new(adamore::sparse::Arcs::new(vec![0, 2, 2, 1, 0, 3], vec![1, 1, 3, 0, 0, 2], 4));
            t.arc_spmm(&arcs, v[0], v[1])
        })),
        case("weighted_view_propagate", vec![uniform(m, 1, 0.1, 1.0, r), randn(7, 2, r)], {
            let adj = Arc::clone(&adj);
            Box::new(move |t, v| {
                let view = WeightedView::new(t, &adj, v[0])?;
                view.propagate(t, v[1])
            })
        }),
        case("weighted_view_mean_neighbors", vec![uniform(m, 1, 0.1, 1.0, r), randn(7, 2, r)], {
            let adj = Arc::clone(&adj);
            Box::new(move |t, v| {
                let view = WeightedView::new(t, &adj, v[0])?;
                view.mean_neighbors(t, v[1])
            })
        }),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, f)| Ok((name, check_op(&inputs, f)?)))
        .collect()
}

const ENTRIES: usize = 12;

/// Five randomly initialised objectives assembled from the public pieces.
pub fn composite_gradient_errors() -> Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::new();
    let (n, f, d_s, d) = (10, 4, 3, 3);
    let mut rng = SessionRng::seed_from_u64(21);
    let g = random_graph(n, 0.35, f, &mut rng);
    let adj = Arc::clone(g.adjacency());
    let s = structural_embeddings(&normalize(&g), d_s)?;
    let desc = node_descriptor(g.features(), &s);
    let x0 = g.features().clone();

    // gated views, both banks and a full residual pool
    {
        let mut store = ParamStore::new();
        let gate = EdgeGateParams::new(&mut store, f + d_s, 4, &mut rng);
        let specs = vec![
            FilterSpec::sgc(1),
            FilterSpec::sgc(2),
            FilterSpec::lapsgc(1, 0.7)?,
        ];
        let bank = ExpertBank::new(&mut store, Channel::Coh, specs, 2, f, f + d_s, d, &mut rng)?;
        let pool = ResidualPool::new(&mut store, Channel::Disp, &ExpertKind::ALL, f, d, &mut rng);
        let ids: Vec<_> = store.ids().collect();
        let err = check_store(&mut store, &ids, ENTRIES, |st| {
            let mut t = Tape::new();
            let x = t.constant(x0.clone());
            let dv = t.constant(desc.clone());
            let logits = edge_logits(&mut t, st, &gate, &adj, dv, true)?;
            let w = gumbel_sigmoid_weights(&mut t, logits, 0.5, &mut SessionRng::seed_from_u64(3), true)?;
            let views = build_views(&mut t, &adj, w)?;
            let bb = backbone_forward(&mut t, st, &bank, x, dv, &views.coh, true)?;
            let res = residual_forward(&mut t, st, &pool, x, &views.disp, true)?;
            let h = enhance(&mut t, bb.h_b, res.h_r)?;
            let sq = t.pow(h, 2.0)?;
            let a = t.mean(sq)?;
            let b = load_balance_loss(&mut t, &bb.stats)?;
            let c = diversity_loss(&mut t, &res.outputs)?;
            let ab = t.add(a, b)?;
            let loss = t.add(ab, c)?;
            Ok((t, loss))
        })?;
        out.push(("gated_views_backbone_residual", err));
    }

    // masked reconstruction through a token, a backbone and the decoder
    {
        let mut store = ParamStore::new();
        let bank = ExpertBank::new(
            &mut store,
            Channel::Disp,
            vec![FilterSpec::lapsgc(1, 1.0)?, FilterSpec::lapsgc(2, 1.0)?, FilterSpec::sgc(1)],
            2,
            f,
            f + d_s,
            d,
            &mut rng,
        )?;
        let decoder = Decoder::new(&mut store, "decoder", d, 5, f, &mut rng);
        let token = store.add("mask_token", randn(1, f, &mut rng) * 0.1);
        let mask = MaskPlan::sample(n, 0.5, &mut rng)?;
        let ids: Vec<_> = store.ids().collect();
        let err = check_store(&mut store, &ids, ENTRIES, |st| {
            let mut t = Tape::new();
            let raw = t.constant(x0.clone());
            let tok = t.param(st, token, true);
            let x = t.replace_rows(raw, tok, Arc::clone(&mask.nodes))?;
            let sv = t.constant(s.matrix().clone());
            let gi = t.hconcat(&[x, sv])?;
            let view = WeightedView::unweighted(&mut t, &adj)?;
            let bb = backbone_forward(&mut t, st, &bank, x, gi, &view, true)?;
            let loss = mae_loss(&mut t, st, &decoder, bb.h_b, &x0, &mask, 2.0, true)?;
            Ok((t, loss))
        })?;
        out.push(("masked_reconstruction", err));
    }

    // cross-filter reconstruction driving the gate
    {
        let mut store = ParamStore::new();
        let gate = EdgeGateParams::new(&mut store, f + d_s, 5, &mut rng);
        let h_coh = randn(n, d, &mut rng);
        let h_disp = randn(n, d, &mut rng);
        let ids = gate.ids();
        let err = check_store(&mut store, &ids, ENTRIES, |st| {
            let mut t = Tape::new();
            let dv = t.constant(desc.clone());
            let logits = edge_logits(&mut t, st, &gate, &adj, dv, true)?;
            let w = gumbel_sigmoid_weights(&mut t, logits, 0.5, &mut SessionRng::seed_from_u64(0), false)?;
            let views = build_views(&mut t, &adj, w)?;
            let l = svg_loss(&mut t, &views, &h_coh, &h_disp, 1.0)?;
            Ok((t, l.total))
        })?;
        out.push(("cross_filter_reconstruction", err));
    }

    // fused embedding into a softmax classifier
    {
        let mut store = ParamStore::new();
        let hc = store.add("h_coh", randn(n, d, &mut rng));
        let hd = store.add("h_disp", randn(n, d, &mut rng));
        let w = store.add("head.w", randn(2 * d, 3, &mut rng));
        let b = store.add("head.b", randn(1, 3, &mut rng));
        let alpha: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let ids = vec![hc, hd, w, b];
        let err = check_store(&mut store, &ids, ENTRIES, |st| {
            let mut t = Tape::new();
            let c = t.param(st, hc, true);
            let dd = t.param(st, hd, true);
            let z = fuse(&mut t, c, dd, &alpha)?;
            let z = t.row_normalize(z)?;
            let wv = t.param(st, w, true);
            let bv = t.param(st, b, true);
            let logits = t.matmul(z, wv)?;
            let logits = t.add_row(logits, bv)?;
            let loss = cross_entropy(&mut t, logits, &labels)?;
            Ok((t, loss))
        })?;
        out.push(("fused_classifier", err));
    }

    // spline and high-order filters on learned weights, diversity penalty
    {
        let mut store = ParamStore::new();
        let wlog = store.add("edge_logits", randn(adj.n_edges(), 1, &mut rng));
        let proj = store.add("proj", randn(f, d, &mut rng));
        let specs: Vec<FilterSpec> = ["splinelp:2", "splinehp:1", "freehpf:1", "lapsgc:3:0.5"]
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_>>()?;
        let ids = vec![wlog, proj];
        let err = check_store(&mut store, &ids, ENTRIES, |st| {
            let mut t = Tape::new();
            let x = t.constant(x0.clone());
            let wl = t.param(st, wlog, true);
            let w = t.sigmoid(wl)?;
            let view = WeightedView::new(&mut t, &adj, w)?;
            let p = t.param(st, proj, true);
            let h = t.matmul(x, p)?;
            let outs = specs
                .iter()
                .map(|sp| apply_filter(&mut t, sp, h, &view))
                .collect::<Result<Vec<_>>>()?;
            let div = diversity_loss(&mut t, &outs)?;
            let rec = scaled_cosine_error(&mut t, outs[0], outs[3], 1.5)?;
            let loss = t.add(div, rec)?;
            Ok((t, loss))
        })?;
        out.push(("spline_filters_diversity", err));
    }
    Ok(out)
}
