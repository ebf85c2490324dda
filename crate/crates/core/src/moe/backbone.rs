use std::fmt;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::filters::{filter_bank_outputs, FilterSpec, WeightedView};
use crate::io::write_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Coh,
    Disp,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Coh => "coh",
            Channel::Disp => "disp",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Filter experts of one channel with their router and shared projection.
#[derive(Debug, Clone)]
pub struct ExpertBank {
    pub channel: Channel,
    pub specs: Vec<FilterSpec>,
    pub top_k: usize,
    /// `F × d_e`, applied to every expert.
    pub projection: ParamId,
    /// `(F + d_s) × N_exp`.
    pub gate_w: ParamId,
    pub gate_b: ParamId,
}

impl ExpertBank {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        channel: Channel,
        specs: Vec<FilterSpec>,
        top_k: usize,
        n_features: usize,
        gate_in: usize,
        d_e: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config(format!("{channel} bank has no experts")));
        }
        if top_k == 0 || top_k > specs.len() {
            return Err(Error::Config(format!(
                "top_k = {top_k} must be in 1..={} for the {channel} bank",
                specs.len()
            )));
        }
        for (i, a) in specs.iter().enumerate() {
            if specs[..i].contains(a) {
                return Err(Error::Config(format!("duplicate expert {a} in {channel} bank")));
            }
        }
        let n_exp = specs.len();
        let p = |s: &str| format!("{}.{s}", channel.name());
        Ok(Self {
            channel,
            top_k,
            projection: store.add_glorot(p("proj"), n_features, d_e, rng),
            gate_w: store.add_glorot(p("router.w"), gate_in, n_exp, rng),
            gate_b: store.add_zeros(p("router.b"), 1, n_exp),
            specs,
        })
    }

    pub fn n_experts(&self) -> usize {
        self.specs.len()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.projection, self.gate_w, self.gate_b]
    }
}

/// Top-K membership per node as a row-major `n × N_exp` mask; ties go to
/// the lowest expert index.
pub fn top_k_mask(logits: &Array2<f64>, k: usize) -> Vec<bool> {
    let (n, e) = logits.dim();
    let mut mask = vec![false; n * e];
    let mut order: Vec<usize> = (0..e).collect();
    for (i, row) in logits.rows().into_iter().enumerate() {
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in &order[..k] {
            mask[i * e + j] = true;
        }
    }
    mask
}

/// Routing summary of one forward pass.
#[derive(Debug, Clone)]
pub struct RoutingStats {
    /// Fraction of nodes whose top-K set contains each expert; sums to K.
    pub f: Vec<f64>,
    /// Mean full-softmax probability of each expert.
    pub p: Vec<f64>,
    pub top_k: usize,
    /// `p` as a differentiable 1 × N_exp node.
    pub p_var: Var,
}

#[derive(Debug, Clone)]
pub struct BackboneOutput {
    pub h_b: Var,
    /// Projected output of every expert, in spec order.
    pub experts: Vec<Var>,
    /// Renormalised gate weights, zero outside each node's top-K.
    pub gates: Var,
    pub stats: RoutingStats,
}

/// `h_b,i = Σ_{k ∈ top-K(i)} g_ik · E_k(x P)_i`. All experts are evaluated
/// densely; sparsity lives in the gate weights.
#[allow(clippy::too_many_arguments)]
pub fn backbone_forward(
    tape: &mut Tape,
    store: &ParamStore,
    bank: &ExpertBank,
    x: Var,
    gate_input: Var,
    view: &WeightedView,
    trainable: bool,
) -> Result<BackboneOutput> {
    let proj = tape.param(store, bank.projection, trainable);
    let gw = tape.param(store, bank.gate_w, trainable);
    let gb = tape.param(store, bank.gate_b, trainable);

    let h = tape.matmul(x, proj)?;
    let experts = filter_bank_outputs(tape, &bank.specs, h, view)?;

    let logits = tape.matmul(gate_input, gw)?;
    let logits = tape.add_row(logits, gb)?;
    let mask = top_k_mask(tape.value(logits), bank.top_k);
    let n = tape.shape(logits).0;
    let n_exp = bank.n_experts();
    let mut f = vec![0.0; n_exp];
    for (idx, &m) in mask.iter().enumerate() {
        if m {
            f[idx % n_exp] += 1.0 / n as f64;
        }
    }
    let gates = tape.masked_softmax(logits, Arc::new(mask))?;
    let full = tape.softmax(logits)?;
    let p_var = tape.col_means(full)?;
    let p = tape.value(p_var).row(0).to_vec();

    let mut h_b = None;
    for (k, &out) in experts.iter().enumerate() {
        let g = tape.select_col(gates, k)?;
        let term = tape.mul_col(out, g)?;
        h_b = Some(match h_b {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(BackboneOutput {
        h_b: h_b.expect("non-empty bank"),
        experts,
        gates,
        stats: RoutingStats {
            f,
            p,
            top_k: bank.top_k,
            p_var,
        },
    })
}

/// `N_exp · Σ_k (f_k / K) · P_k`, differentiable through `P` only.
pub fn load_balance_loss(tape: &mut Tape, stats: &RoutingStats) -> Result<Var> {
    let n_exp = stats.f.len();
    let coef: Vec<f64> = stats
        .f
        .iter()
        .map(|fk| n_exp as f64 * fk / stats.top_k as f64)
        .collect();
    let coef = tape.constant(Array2::from_shape_vec((n_exp, 1), coef).expect("column"));
    tape.matmul(stats.p_var, coef)
}

pub fn load_balance_value(f: &[f64], p: &[f64], top_k: usize) -> f64 {
    let n_exp = f.len() as f64;
    n_exp * f.iter().zip(p).map(|(fk, pk)| fk / top_k as f64 * pk).sum::<f64>()
}

/// One `routing.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingRecord {
    pub step: usize,
    pub channel: Channel,
    pub expert: usize,
    pub f: f64,
    pub p: f64,
}

impl RoutingRecord {
    pub fn from_stats(step: usize, channel: Channel, stats: &RoutingStats) -> Vec<Self> {
        (0..stats.f.len())
            .map(|k| RoutingRecord {
                step,
                channel,
                expert: k,
                f: stats.f[k],
                p: stats.p[k],
            })
            .collect()
    }
}

pub fn write_routing_csv(path: &Path, rows: &[RoutingRecord]) -> Result<()> {
    let mut out = String::from("step,channel,expert,f_k,P_k\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.step, r.channel, r.expert, r.f, r.p));
    }
    write_text(path, &out)
}
