//! Learned edge gating: per-edge MLP logits, Gumbel-sigmoid weights, the
//! complementary cohesive/dispersive views and the cross-filter
//! reconstruction loss that trains the gate.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{gumbel_pair, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::filters::{apply_filter, FilterKind, FilterSpec, WeightedView};
use crate::io::write_text;
use crate::loss::scaled_cosine_error;
use crate::sparse::Adjacency;
use crate::Matrix;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_GATE_HIDDEN: usize = 64;

/// One-hidden-layer MLP over `[x_i; s_i; x_j; s_j]`. The first layer is
/// stored as two halves acting on the source and target descriptors.
#[derive(Debug, Clone)]
pub struct EdgeGateParams {
    pub w_src: ParamId,
    pub w_dst: ParamId,
    pub b_hidden: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
    in_dim: usize,
}

impl EdgeGateParams {
    /// `node_dim` is `F + d_s`; the MLP input is twice that.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        node_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        // Glorot bounds of the full 2(F + d_s) × hidden layer.
        let w1 = crate::autodiff::params::glorot(2 * node_dim, hidden, rng);
        let w_src = store.add("gate.w_src", w1.slice(ndarray::s![..node_dim, ..]).to_owned());
        let w_dst = store.add("gate.w_dst", w1.slice(ndarray::s![node_dim.., ..]).to_owned());
        Self {
            w_src,
            w_dst,
            b_hidden: store.add_zeros("gate.b_hidden", 1, hidden),
            w_out: store.add_glorot("gate.w_out", hidden, 1, rng),
            b_out: store.add_zeros("gate.b_out", 1, 1),
            in_dim: 2 * node_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.in_dim
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.w_src, self.w_dst, self.b_hidden, self.w_out, self.b_out]
    }
}

/// Symmetrised per-edge logits `½(MLP(z_ij) + MLP(z_ji))`, `n_edges × 1`.
/// `descriptor` holds `[x_i; s_i]` per row.
pub fn edge_logits(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EdgeGateParams,
    adj: &Adjacency,
    descriptor: Var,
    trainable: bool,
) -> Result<Var> {
    let sd = tape.shape(descriptor);
    if 2 * sd.1 != params.in_dim {
        return Err(Error::Shape {
            op: "edge_logits",
            left: sd,
            right: (params.in_dim / 2, 0),
        });
    }
    let w_src = tape.param(store, params.w_src, trainable);
    let w_dst = tape.param(store, params.w_dst, trainable);
    let b_hidden = tape.param(store, params.b_hidden, trainable);
    let w_out = tape.param(store, params.w_out, trainable);
    let b_out = tape.param(store, params.b_out, trainable);

    let u = tape.matmul(descriptor, w_src)?;
    let v = tape.matmul(descriptor, w_dst)?;
    let heads = Arc::new(adj.edges().iter().map(|e| e.0).collect::<Vec<_>>());
    let tails = Arc::new(adj.edges().iter().map(|e| e.1).collect::<Vec<_>>());

    let mut directed = |from: &Arc<Vec<usize>>, to: &Arc<Vec<usize>>| -> Result<Var> {
        let a = tape.gather_rows(u, Arc::clone(from))?;
        let b = tape.gather_rows(v, Arc::clone(to))?;
        let pre = tape.add(a, b)?;
        let pre = tape.add_row(pre, b_hidden)?;
        let hid = tape.relu(pre)?;
        tape.matmul(hid, w_out)
    };
    let forward = directed(&heads, &tails)?;
    let backward = directed(&tails, &heads)?;
    let both = tape.add(forward, backward)?;
    let mean = tape.scale(both, 0.5)?;
    tape.add_row(mean, b_out)
}

/// `σ((ℓ + g₁ − g₂)/τ)` in train mode, `σ(ℓ/τ)` in eval mode. Noise is
/// constant; gradients flow through the logits only.
pub fn gumbel_sigmoid_weights<R: Rng + ?Sized>(
    tape: &mut Tape,
    logits: Var,
    tau: f64,
    rng: &mut R,
    train_mode: bool,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let mut z = logits;
    if train_mode {
        let (g1, g2) = gumbel_pair(rng, tape.shape(logits), true);
        let noise = tape.constant(g1 - g2);
        z = tape.add(z, noise)?;
    }
    let z = tape.scale(z, 1.0 / tau)?;
    tape.sigmoid(z)
}

/// Complementary reweightings of one adjacency: the cohesive view carries
/// `w_e`, the dispersive view `1 − w_e`, both on each direction of edge `e`.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub weights: Var,
    pub coh: WeightedView,
    pub disp: WeightedView,
}

impl ViewPair {
    /// Entrywise `(A_coh, A_disp)` without self-loops, for audits.
    pub fn dense(&self, tape: &Tape) -> (Matrix, Matrix) {
        let adj = self.coh.adjacency();
        let w = tape.value(self.weights).column(0).to_vec();
        let inv: Vec<f64> = w.iter().map(|v| 1.0 - v).collect();
        (adj.to_dense(&w), adj.to_dense(&inv))
    }
}

/// Weights must lie in `[0, 1]`; learned weights are strictly inside, the
/// oracle experiments also use the endpoints.
pub fn build_views(tape: &mut Tape, adj: &Arc<Adjacency>, weights: Var) -> Result<ViewPair> {
    let sw = tape.shape(weights);
    if sw != (adj.n_edges(), 1) {
        return Err(Error::Shape {
            op: "build_views",
            left: (adj.n_edges(), 1),
            right: sw,
        });
    }
    if let Some(bad) = tape.value(weights).iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::invalid(format!("edge weight {bad} outside [0, 1]")));
    }
    let inv = tape.one_minus(weights)?;
    Ok(ViewPair {
        weights,
        coh: WeightedView::new(tape, adj, weights)?,
        disp: WeightedView::new(tape, adj, inv)?,
    })
}

/// Both cross-filter reconstruction terms and their sum.
#[derive(Debug, Clone, Copy)]
pub struct SvgLoss {
    pub low_to_high: Var,
    pub high_to_low: Var,
    pub total: Var,
}

/// A fixed low-pass filter on the dispersive view reconstructs the
/// dispersive backbone output, and a fixed high-pass filter on the cohesive
/// view reconstructs the cohesive one. Backbone outputs enter as constants.
pub fn svg_loss(
    tape: &mut Tape,
    views: &ViewPair,
    h_b_coh: &Matrix,
    h_b_disp: &Matrix,
    gamma_svg: f64,
) -> Result<SvgLoss> {
    let target_disp = tape.constant(h_b_disp.clone());
    let lpf = apply_filter(tape, &FilterSpec::new(FilterKind::FreeLpf, 1), target_disp, &views.disp)?;
    let low_to_high = scaled_cosine_error(tape, lpf, target_disp, gamma_svg)?;

    let target_coh = tape.constant(h_b_coh.clone());
    let hpf = apply_filter(tape, &FilterSpec::new(FilterKind::FreeHpf, 1), target_coh, &views.coh)?;
    let high_to_low = scaled_cosine_error(tape, hpf, target_coh, gamma_svg)?;

    let total = tape.add(low_to_high, high_to_low)?;
    Ok(SvgLoss {
        low_to_high,
        high_to_low,
        total,
    })
}

/// `u v w` per line.
pub fn write_weights_tsv(path: &Path, edges: &[(usize, usize)], w: &[f64]) -> Result<()> {
    if edges.len() != w.len() {
        return Err(Error::invalid(format!("{} weights for {} edges", w.len(), edges.len())));
    }
    let mut out = String::with_capacity(edges.len() * 24);
    for (&(u, v), &x) in edges.iter().zip(w) {
        out.push_str(&format!("{u}\t{v}\t{x}\n"));
    }
    write_text(path, &out)
}

/// Reads `u v w` lines back into a weight vector aligned with `adj`'s edges.
pub fn read_weights_tsv(path: &Path, adj: &Adjacency) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut w = vec![f64::NAN; adj.n_edges()];
    let index: std::collections::HashMap<(usize, usize), usize> =
        adj.edges().iter().enumerate().map(|(i, &e)| (e, i)).collect();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: no + 1,
            msg,
        };
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 3 {
            return Err(parse_err(format!("expected 'u v w', got {line:?}")));
        }
        let u: usize = t[0].parse().map_err(|_| parse_err(format!("bad node {:?}", t[0])))?;
        let v: usize = t[1].parse().map_err(|_| parse_err(format!("bad node {:?}", t[1])))?;
        let x: f64 = t[2]
            .parse()
            .ok()
            .filter(|x: &f64| (0.0..=1.0).contains(x))
            .ok_or_else(|| parse_err(format!("weight {:?} not in [0, 1]", t[2])))?;
        let &e = index
            .get(&(u.min(v), u.max(v)))
            .ok_or_else(|| parse_err(format!("({u}, {v}) is not an edge")))?;
        w[e] = x;
    }
    if let Some(e) = w.iter().position(|x| x.is_nan()) {
        let (u, v) = adj.edges()[e];
        return Err(Error::invalid(format!(
            "{}: missing weight for edge ({u}, {v})",
            path.display()
        )));
    }
    Ok(w)
}

/// Weight column as a plain vector.
pub fn weight_values(tape: &Tape, w: Var) -> Vec<f64> {
    tape.value(w).column(0).to_vec()
}

pub(crate) fn column(v: &[f64]) -> Matrix {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column")
}
