use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use super::Channel;
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::filters::WeightedView;
use crate::sparse::Arcs;

/// Residual scales start small so the pool begins as a minor correction.
pub const DEFAULT_GAMMA_INIT: f64 = 0.1;

const GAT_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExpertKind {
    Gcn,
    SageMean,
    Gin0,
    Gat,
}

impl ExpertKind {
    pub const ALL: [ExpertKind; 4] = [
        ExpertKind::Gcn,
        ExpertKind::SageMean,
        ExpertKind::Gin0,
        ExpertKind::Gat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExpertKind::Gcn => "gcn",
            ExpertKind::SageMean => "sage",
            ExpertKind::Gin0 => "gin",
            ExpertKind::Gat => "gat",
        }
    }

    /// Parses a comma-separated list; `none` (or empty) is the empty pool.
    pub fn parse_list(s: &str) -> Result<Vec<ExpertKind>> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(vec![]);
        }
        s.split(',').map(str::parse).collect()
    }
}

impl fmt::Display for ExpertKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExpertKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gcn" | "gcn-layer" => Ok(ExpertKind::Gcn),
            "sage" | "sage-mean" => Ok(ExpertKind::SageMean),
            "gin" | "gin0" => Ok(ExpertKind::Gin0),
            "gat" | "gat-1head" => Ok(ExpertKind::Gat),
            other => Err(Error::Config(format!(
                "unknown residual expert {other:?} (expected gcn, sage, gin or gat)"
            ))),
        }
    }
}

/// One message-passing layer `F → d_e` with its residual scale `γ`.
#[derive(Debug, Clone)]
pub struct ResidualExpert {
    pub kind: ExpertKind,
    pub weights: Vec<ParamId>,
    pub gamma: ParamId,
}

impl ResidualExpert {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        kind: ExpertKind,
        n_features: usize,
        d_e: usize,
        rng: &mut R,
    ) -> Self {
        let p = |s: &str| format!("{prefix}.{s}");
        let weights = match kind {
            ExpertKind::Gcn => vec![store.add_glorot(p("w"), n_features, d_e, rng)],
            ExpertKind::SageMean => vec![
                store.add_glorot(p("w_self"), n_features, d_e, rng),
                store.add_glorot(p("w_neigh"), n_features, d_e, rng),
            ],
            ExpertKind::Gin0 => vec![
                store.add_glorot(p("w1"), n_features, d_e, rng),
                store.add_zeros(p("b1"), 1, d_e),
                store.add_glorot(p("w2"), d_e, d_e, rng),
                store.add_zeros(p("b2"), 1, d_e),
            ],
            ExpertKind::Gat => vec![
                store.add_glorot(p("w"), n_features, d_e, rng),
                store.add_glorot(p("att_src"), d_e, 1, rng),
                store.add_glorot(p("att_dst"), d_e, 1, rng),
            ],
        };
        let gamma = store.add(p("gamma"), Array2::from_elem((1, 1), DEFAULT_GAMMA_INIT));
        Self {
            kind,
            weights,
            gamma,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ResidualPool {
    pub experts: Vec<ResidualExpert>,
}

impl ResidualPool {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        channel: Channel,
        kinds: &[ExpertKind],
        n_features: usize,
        d_e: usize,
        rng: &mut R,
    ) -> Self {
        let experts = kinds
            .iter()
            .enumerate()
            .map(|(k, &kind)| {
                let prefix = format!("{}.res{k}.{}", channel.name(), kind.name());
                ResidualExpert::new(store, &prefix, kind, n_features, d_e, rng)
            })
            .collect();
        Self { experts }
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.experts
            .iter()
            .flat_map(|e| e.weights.iter().copied().chain([e.gamma]))
            .collect()
    }
}

/// Output of one residual expert before scaling.
pub fn expert_forward(
    tape: &mut Tape,
    store: &ParamStore,
    expert: &ResidualExpert,
    x: Var,
    view: &WeightedView,
    trainable: bool,
) -> Result<Var> {
    let w: Vec<Var> = expert
        .weights
        .iter()
        .map(|&id| tape.param(store, id, trainable))
        .collect();
    match expert.kind {
        ExpertKind::Gcn => {
            let xw = tape.matmul(x, w[0])?;
            let h = view.propagate(tape, xw)?;
            tape.relu(h)
        }
        ExpertKind::SageMean => {
            let own = tape.matmul(x, w[0])?;
            let nb = tape.matmul(x, w[1])?;
            let nb = view.mean_neighbors(tape, nb)?;
            let h = tape.add(own, nb)?;
            tape.relu(h)
        }
        ExpertKind::Gin0 => {
            let xw = tape.matmul(x, w[0])?;
            let agg = view.aggregate(tape, xw)?;
            let h = tape.add(xw, agg)?;
            let h = tape.add_row(h, w[1])?;
            let h = tape.relu(h)?;
            let h = tape.matmul(h, w[2])?;
            let h = tape.add_row(h, w[3])?;
            tape.relu(h)
        }
        ExpertKind::Gat => gat_forward(tape, x, w[0], w[1], w[2], view),
    }
}

/// Single-head attention over each node's neighbours and itself. Scores are
/// `leaky_relu(a_srcᵀ z_i + a_dstᵀ z_j)`; the softmax weights every arc by
/// its view weight (self-loops weigh 1).
fn gat_forward(
    tape: &mut Tape,
    x: Var,
    w: Var,
    att_src: Var,
    att_dst: Var,
    view: &WeightedView,
) -> Result<Var> {
    let adj = Arc::clone(view.adjacency());
    let n = adj.n_nodes();
    let m = adj.n_edges();
    let mut rows = Vec::with_capacity(2 * m + n);
    let mut cols = Vec::with_capacity(2 * m + n);
    let mut wid = Vec::with_capacity(2 * m + n);
    for (i, j, e) in adj.arcs() {
        rows.push(i);
        cols.push(j);
        wid.push(e);
    }
    for i in 0..n {
        rows.push(i);
        cols.push(i);
        wid.push(m);
    }
    let arcs = Arc::new(Arcs::new(rows.clone(), cols.clone(), n));
    let (rows, cols, wid) = (Arc::new(rows), Arc::new(cols), Arc::new(wid));

    let z = tape.matmul(x, w)?;
    let s_src = tape.matmul(z, att_src)?;
    let s_dst = tape.matmul(z, att_dst)?;
    let a = tape.gather_rows(s_src, Arc::clone(&rows))?;
    let b = tape.gather_rows(s_dst, Arc::clone(&cols))?;
    let e = tape.add(a, b)?;
    let e = tape.leaky_relu(e, GAT_SLOPE)?;

    let mut row_max = vec![f64::NEG_INFINITY; n];
    for (k, &i) in rows.iter().enumerate() {
        row_max[i] = row_max[i].max(tape.value(e)[[k, 0]]);
    }
    let shift = Array2::from_shape_fn((rows.len(), 1), |(k, _)| -row_max[rows[k]]);
    let shift = tape.constant(shift);
    let e = tape.add(e, shift)?;
    let ex = tape.exp(e)?;

    let one = tape.constant(Array2::ones((1, 1)));
    let wv = tape.vconcat(&[view.weights(), one])?;
    let arc_w = tape.gather_rows(wv, wid)?;
    let ex = tape.mul(ex, arc_w)?;
    let denom = tape.scatter_add_rows(ex, Arc::clone(&rows), n)?;
    let denom = tape.gather_rows(denom, Arc::clone(&rows))?;
    let att = tape.div(ex, denom)?;

    let h = tape.arc_spmm(&arcs, att, z)?;
    tape.relu(h)
}

#[derive(Debug, Clone)]
pub struct ResidualOutput {
    /// `Σ_k γ_k E_k`, absent for an empty pool.
    pub h_r: Option<Var>,
    /// Unscaled expert outputs.
    pub outputs: Vec<Var>,
}

/// Every expert is active; outputs are combined by their learnable scales.
pub fn residual_forward(
    tape: &mut Tape,
    store: &ParamStore,
    pool: &ResidualPool,
    x: Var,
    view: &WeightedView,
    trainable: bool,
) -> Result<ResidualOutput> {
    let mut outputs = Vec::with_capacity(pool.len());
    let mut h_r = None;
    for expert in &pool.experts {
        let out = expert_forward(tape, store, expert, x, view, trainable)?;
        let gamma = tape.param(store, expert.gamma, trainable);
        let scaled = tape.scale_by(gamma, out)?;
        h_r = Some(match h_r {
            None => scaled,
            Some(acc) => tape.add(acc, scaled)?,
        });
        outputs.push(out);
    }
    Ok(ResidualOutput { h_r, outputs })
}

/// `h_b + h_r`; an absent residual leaves the backbone output untouched.
pub fn enhance(tape: &mut Tape, h_b: Var, h_r: Option<Var>) -> Result<Var> {
    match h_r {
        Some(r) => tape.add(h_b, r),
        None => Ok(h_b),
    }
}
