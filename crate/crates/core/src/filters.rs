//! Parameter-free graph filters over a (possibly reweighted) adjacency.
//!
//! Every filter is linear in its input, so callers may project features
//! before filtering instead of after.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::sparse::Adjacency;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Sgc,
    LapSgc,
    FreeLpf,
    FreeHpf,
    SplineLp,
    SplineHp,
}

impl FilterKind {
    fn token(self) -> &'static str {
        match self {
            FilterKind::Sgc => "sgc",
            FilterKind::LapSgc => "lapsgc",
            FilterKind::FreeLpf => "freelpf",
            FilterKind::FreeHpf => "freehpf",
            FilterKind::SplineLp => "splinelp",
            FilterKind::SplineHp => "splinehp",
        }
    }
}

/// One filter configuration, written `kind:k_hops[:alpha]` in run configs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub k_hops: usize,
    alpha: Option<f64>,
}

pub const DEFAULT_LAPSGC_ALPHA: f64 = 1.0;

impl FilterSpec {
    pub fn sgc(k_hops: usize) -> Self {
        Self {
            kind: FilterKind::Sgc,
            k_hops,
            alpha: None,
        }
    }

    pub fn lapsgc(k_hops: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("lapsgc alpha {alpha} outside (0, 1]")));
        }
        Ok(Self {
            kind: FilterKind::LapSgc,
            k_hops,
            alpha: Some(alpha),
        })
    }

    /// Any kind other than LapSgc; `FreeLpf`/`FreeHpf` are single-hop.
    pub fn new(kind: FilterKind, k_hops: usize) -> Self {
        match kind {
            FilterKind::LapSgc => Self::lapsgc(k_hops, DEFAULT_LAPSGC_ALPHA).expect("valid alpha"),
            FilterKind::FreeLpf | FilterKind::FreeHpf => Self {
                kind,
                k_hops: 1,
                alpha: None,
            },
            _ => Self {
                kind,
                k_hops,
                alpha: None,
            },
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.alpha {
            Some(a) => write!(f, "{}:{}:{}", self.kind.token(), self.k_hops, a),
            None => write!(f, "{}:{}", self.kind.token(), self.k_hops),
        }
    }
}

impl FromStr for FilterSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad filter spec {s:?}, expected kind:k_hops[:alpha]"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err(bad());
        }
        let kind = match parts[0].to_ascii_lowercase().as_str() {
            "sgc" => FilterKind::Sgc,
            "lapsgc" => FilterKind::LapSgc,
            "freelpf" => FilterKind::FreeLpf,
            "freehpf" => FilterKind::FreeHpf,
            "splinelp" => FilterKind::SplineLp,
            "splinehp" => FilterKind::SplineHp,
            _ => return Err(bad()),
        };
        let k: usize = parts[1].parse().map_err(|_| bad())?;
        match (kind, parts.get(2)) {
            (FilterKind::LapSgc, Some(a)) => {
                let a: f64 = a.parse().map_err(|_| bad())?;
                FilterSpec::lapsgc(k, a).map_err(|e| Error::Config(e.to_string()))
            }
            (FilterKind::LapSgc, None) => FilterSpec::lapsgc(k, DEFAULT_LAPSGC_ALPHA),
            (_, Some(_)) => Err(Error::Config(format!("alpha only applies to lapsgc: {s:?}"))),
            (FilterKind::FreeLpf | FilterKind::FreeHpf, None) if k != 1 => {
                Err(Error::Config(format!("{} is single-hop: {s:?}", kind.token())))
            }
            (_, None) => Ok(FilterSpec::new(kind, k)),
        }
    }
}

/// Parses a comma-separated list of filter specs.
pub fn parse_specs(s: &str) -> Result<Vec<FilterSpec>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect()
}

/// The graph with per-edge weights recorded on a tape, plus the degree
/// terms every filter needs. Degrees are recomputed from the weights, so
/// gradients reach the weights through the normalisation too.
#[derive(Debug, Clone)]
pub struct WeightedView {
    adj: Arc<Adjacency>,
    weights: Var,
    /// `(1 + Σ_j w_ij)^{-1/2}`, n×1.
    dinv_sqrt: Var,
    /// `1 / Σ_j w_ij`, with 0 for nodes of zero weighted degree.
    inv_deg: Var,
}

impl WeightedView {
    /// `weights` is an `n_edges × 1` node on `tape`.
    pub fn new(tape: &mut Tape, adj: &Arc<Adjacency>, weights: Var) -> Result<Self> {
        let ones = tape.constant(Array2::ones((adj.n_nodes(), 1)));
        let deg = tape.edge_spmm(adj, weights, ones)?;
        let deg_hat = tape.shift(deg, 1.0)?;
        let dinv_sqrt = tape.pow(deg_hat, -0.5)?;
        // Nodes whose weighted degree is exactly zero get a unit placeholder
        // degree, then their reciprocal is masked back to zero.
        let keep = tape.value(deg).mapv(|d| if d == 0.0 { 0.0 } else { 1.0 });
        let placeholder = tape.constant(keep.mapv(|k| 1.0 - k));
        let safe = tape.add(deg, placeholder)?;
        let inv = tape.pow(safe, -1.0)?;
        let keep = tape.constant(keep);
        let inv_deg = tape.mul(inv, keep)?;
        Ok(Self {
            adj: Arc::clone(adj),
            weights,
            dinv_sqrt,
            inv_deg,
        })
    }

    /// The unweighted graph (every edge weight 1, constant).
    pub fn unweighted(tape: &mut Tape, adj: &Arc<Adjacency>) -> Result<Self> {
        let w = tape.constant(Array2::ones((adj.n_edges(), 1)));
        Self::new(tape, adj, w)
    }

    /// Constant weights taken from a slice.
    pub fn fixed(tape: &mut Tape, adj: &Arc<Adjacency>, w: &[f64]) -> Result<Self> {
        let w = tape.constant(Array2::from_shape_vec((w.len(), 1), w.to_vec()).map_err(|_| {
            Error::invalid("weight vector shape")
        })?);
        Self::new(tape, adj, w)
    }

    pub fn adjacency(&self) -> &Arc<Adjacency> {
        &self.adj
    }

    pub fn weights(&self) -> Var {
        self.weights
    }

    /// `A_w h`, no self-loop.
    pub fn aggregate(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        tape.edge_spmm(&self.adj, self.weights, h)
    }

    /// `Ã_w h` with `Ã_w = D̂_w^{-1/2}(A_w + I)D̂_w^{-1/2}`.
    pub fn propagate(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let scaled = tape.mul_col(h, self.dinv_sqrt)?;
        let agg = tape.edge_spmm(&self.adj, self.weights, scaled)?;
        let with_self = tape.add(agg, scaled)?;
        tape.mul_col(with_self, self.dinv_sqrt)
    }

    /// `D_w^{-1} A_w h`, zero for nodes without weighted neighbours.
    pub fn mean_neighbors(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let agg = self.aggregate(tape, h)?;
        tape.mul_col(agg, self.inv_deg)
    }

    fn step(&self, tape: &mut Tape, op: PowerOp, h: Var) -> Result<Var> {
        match op {
            PowerOp::Tilde => self.propagate(tape, h),
            PowerOp::Lap(bits) => {
                let a = f64::from_bits(bits);
                let p = self.propagate(tape, h)?;
                let p = tape.scale(p, a)?;
                tape.sub(h, p)
            }
            PowerOp::Spline(sign) => {
                let m = self.mean_neighbors(tape, h)?;
                let m = tape.scale(m, f64::from(sign))?;
                let s = tape.add(h, m)?;
                tape.scale(s, 0.5)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum PowerOp {
    Tilde,
    Lap(u64),
    Spline(i8),
}

impl PowerOp {
    fn of(spec: &FilterSpec) -> Self {
        match spec.kind {
            FilterKind::Sgc | FilterKind::FreeLpf => PowerOp::Tilde,
            FilterKind::LapSgc => PowerOp::Lap(spec.alpha.unwrap_or(DEFAULT_LAPSGC_ALPHA).to_bits()),
            FilterKind::FreeHpf => PowerOp::Lap(1.0f64.to_bits()),
            FilterKind::SplineLp => PowerOp::Spline(1),
            FilterKind::SplineHp => PowerOp::Spline(-1),
        }
    }
}

pub fn apply_filter(tape: &mut Tape, spec: &FilterSpec, h: Var, view: &WeightedView) -> Result<Var> {
    let op = PowerOp::of(spec);
    let mut out = h;
    for _ in 0..spec.k_hops {
        out = view.step(tape, op, out)?;
    }
    Ok(out)
}

/// Outputs for every spec, in order. Specs sharing an operator reuse each
/// other's intermediate powers.
pub fn filter_bank_outputs(
    tape: &mut Tape,
    specs: &[FilterSpec],
    h: Var,
    view: &WeightedView,
) -> Result<Vec<Var>> {
    if specs.is_empty() {
        return Err(Error::invalid("empty filter bank"));
    }
    let mut powers: HashMap<PowerOp, Vec<Var>> = HashMap::new();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let op = PowerOp::of(spec);
        let chain = powers.entry(op).or_insert_with(|| vec![h]);
        while chain.len() <= spec.k_hops {
            let last = *chain.last().expect("non-empty");
            let next = view.step(tape, op, last)?;
            chain.push(next);
        }
        out.push(chain[spec.k_hops]);
    }
    Ok(out)
}
