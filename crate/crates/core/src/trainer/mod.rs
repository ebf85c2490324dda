//! Training: configuration, the full model, the alternating two-step
//! optimisation, embedding extraction, few-shot fine-tuning and the flat
//! heterogeneous MoE baseline used by the stability study.

mod model;
mod naive;
mod session;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::FilterSpec;
use crate::fusion::{FusionMode, WeightStatistic};
use crate::graph::{normalize, structural_embeddings, Graph, NormalizedOps, StructuralEmbedding};
use crate::io::write_text;
use crate::moe::{DiversityTarget, ExpertKind};

pub use self::model::{Decoder, Model};
pub use self::naive::{naive_moe_baseline, volatility, NaivePool};
pub use self::session::{composite_loss, mae_loss, MaskPlan, TrainState};

/// Where the edge weights of the two views come from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ViewMode {
    /// The gating MLP.
    #[default]
    Learned,
    /// No reweighting: both channels see the original graph.
    Raw,
    /// Externally supplied weights in `[0, 1]`, one per edge.
    Fixed(Arc<Vec<f64>>),
}

impl fmt::Display for ViewMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewMode::Learned => "learned",
            ViewMode::Raw => "raw",
            ViewMode::Fixed(_) => "fixed",
        })
    }
}

impl FromStr for ViewMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "learned" => Ok(ViewMode::Learned),
            "raw" => Ok(ViewMode::Raw),
            other => Err(Error::Config(format!(
                "unknown view mode {other:?} (expected learned or raw; fixed weights come from a weights file)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Embedding width `d_e` per channel.
    pub hidden: usize,
    pub mask_ratio: f64,
    /// Exponent of the masked reconstruction error.
    pub gamma: f64,
    /// Exponent of the cross-filter reconstruction error.
    pub gamma_svg: f64,
    pub lambda_load: f64,
    pub lambda_div: f64,
    pub lambda_cls: f64,
    pub tau: f64,
    pub top_k: usize,
    pub coh_bank: Vec<FilterSpec>,
    pub disp_bank: Vec<FilterSpec>,
    /// Residual experts instantiated in each channel.
    pub residual: Vec<ExpertKind>,
    pub div_target: DiversityTarget,
    pub gate_hidden: usize,
    pub struct_dim: usize,
    /// Gate updates per epoch before the main update.
    pub svg_steps: usize,
    pub view_mode: ViewMode,
    pub fusion: FusionMode,
    pub weight_stat: WeightStatistic,
    pub normalize_features: bool,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub seed: u64,
}

/// Default bank: hops `1..=n` of SGC (cohesive) or LapSGC (dispersive).
pub fn default_banks(n_exp: usize) -> (Vec<FilterSpec>, Vec<FilterSpec>) {
    let coh = (1..=n_exp).map(FilterSpec::sgc).collect();
    let disp = (1..=n_exp)
        .map(|k| FilterSpec::lapsgc(k, crate::filters::DEFAULT_LAPSGC_ALPHA).expect("valid alpha"))
        .collect();
    (coh, disp)
}

pub const DEFAULT_N_EXP: usize = 4;

impl Default for TrainConfig {
    fn default() -> Self {
        let (coh_bank, disp_bank) = default_banks(DEFAULT_N_EXP);
        Self {
            epochs: 200,
            lr: crate::autodiff::adam::DEFAULT_LR,
            hidden: 128,
            mask_ratio: 0.5,
            gamma: 2.0,
            gamma_svg: 1.0,
            lambda_load: 0.1,
            lambda_div: 0.1,
            lambda_cls: 1.0,
            tau: crate::views::DEFAULT_TAU,
            top_k: 2,
            coh_bank,
            disp_bank,
            residual: vec![ExpertKind::Gat],
            div_target: DiversityTarget::Foundational,
            gate_hidden: crate::views::DEFAULT_GATE_HIDDEN,
            struct_dim: crate::graph::DEFAULT_STRUCT_DIM,
            svg_steps: 1,
            view_mode: ViewMode::Learned,
            fusion: FusionMode::Adaptive,
            weight_stat: WeightStatistic::Mean,
            normalize_features: false,
            finetune_epochs: 50,
            finetune_lr: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Replaces both banks with `n` hop-indexed experts.
    pub fn set_n_exp(&mut self, n: usize) {
        let (c, d) = default_banks(n);
        self.coh_bank = c;
        self.disp_bank = d;
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return fail(format!("mask_ratio {} must be in (0, 1)", self.mask_ratio));
        }
        for (name, v) in [
            ("lambda_load", self.lambda_load),
            ("lambda_div", self.lambda_div),
            ("lambda_cls", self.lambda_cls),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        for (name, v) in [("lr", self.lr), ("finetune_lr", self.finetune_lr), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.gamma.is_finite() || !self.gamma_svg.is_finite() {
            return fail("gamma and gamma_svg must be finite".into());
        }
        for (name, v) in [
            ("hidden", self.hidden),
            ("gate_hidden", self.gate_hidden),
            ("struct_dim", self.struct_dim),
            ("svg_steps", self.svg_steps),
        ] {
            if v == 0 {
                return fail(format!("{name} must be >= 1"));
            }
        }
        let n_exp = self.coh_bank.len().min(self.disp_bank.len());
        if self.top_k == 0 || self.top_k > n_exp {
            return fail(format!("top_k = {} must be in 1..={n_exp}", self.top_k));
        }
        if let ViewMode::Fixed(w) = &self.view_mode {
            if w.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return fail("fixed edge weights must lie in [0, 1]".into());
            }
        }
        Ok(())
    }
}

/// Graph-derived inputs shared by every session on the same data.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub graph: Graph,
    pub ops: NormalizedOps,
    pub structural: StructuralEmbedding,
}

impl GraphContext {
    pub fn new(g: &Graph, cfg: &TrainConfig) -> Result<Self> {
        let graph = if cfg.normalize_features {
            g.with_row_normalized_features()
        } else {
            g.clone()
        };
        let ops = normalize(&graph);
        let structural = structural_embeddings(&ops, cfg.struct_dim)?;
        Ok(Self {
            graph,
            ops,
            structural,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }
}

/// Per-epoch loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub l_mae: f64,
    pub l_load: f64,
    pub l_div: f64,
    pub l_svg: f64,
    pub total: f64,
}

/// One JSON object per line.
pub fn write_metrics_jsonl(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r).expect("plain struct"));
        out.push('\n');
    }
    write_text(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.lr, 3e-5);
        assert_eq!(cfg.lambda_load, 0.1);
        assert_eq!(cfg.coh_bank.len(), 4);
        assert_eq!(cfg.disp_bank[3].to_string(), "lapsgc:4:1");
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = TrainConfig {
            mask_ratio: 1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        c.mask_ratio = 0.5;
        c.lambda_div = -0.1;
        assert!(c.validate().is_err());
        c.lambda_div = 0.0;
        c.top_k = 5;
        assert!(c.validate().is_err());
        c.top_k = 1;
        c.epochs = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn metrics_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.jsonl");
        let r = LossRecord {
            epoch: 1,
            l_mae: 0.5,
            l_load: 1.0,
            l_div: 0.25,
            l_svg: 0.0,
            total: 0.625,
        };
        write_metrics_jsonl(&p, &[r, r]).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"epoch":1,"l_mae":0.5,"l_load":1.0,"l_div":0.25,"l_svg":0.0,"total":0.625}"#
        );
    }
}
