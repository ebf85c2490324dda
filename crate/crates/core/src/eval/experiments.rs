use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::probe::{probe_graph, ProbeConfig, ProbeResult};
use super::{median, par_map};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::trainer::{naive_moe_baseline, volatility, GraphContext, LossRecord, NaivePool, TrainConfig, TrainState, ViewMode};
use crate::{Matrix, SessionRng};

/// Trains a fresh session and returns the fused embedding and loss history.
pub fn train_embed(g: &Graph, cfg: &TrainConfig) -> Result<(Matrix, Vec<LossRecord>)> {
    let ctx = GraphContext::new(g, cfg)?;
    let mut st = TrainState::new(&ctx, cfg.clone())?;
    st.fit(&ctx)?;
    let e = st.embed(&ctx)?;
    Ok((e, st.history))
}

/// Trains, embeds and probes with splits seeded by `cfg.seed`.
pub fn train_and_probe(g: &Graph, cfg: &TrainConfig, probe: &ProbeConfig) -> Result<ProbeResult> {
    let (e, _) = train_embed(g, cfg)?;
    probe_graph(&e, g, probe, cfg.seed)
}

/// How label-derived weights are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OracleMode {
    /// Same-label edges get `w_same`, cross-label edges `w_diff`.
    Distinctiveness { w_same: f64, w_diff: f64 },
    /// Same-label edges are 1 with probability `p_coh_correct` (else 0);
    /// cross-label edges are 0 with probability `p_disp_correct` (else 1).
    Accuracy { p_coh_correct: f64, p_disp_correct: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleNoise {
    /// Fraction of edges whose weight is perturbed.
    pub ratio: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleWeightSpec {
    pub mode: OracleMode,
    pub noise: Option<OracleNoise>,
}

impl OracleWeightSpec {
    pub fn distinct(w_same: f64, w_diff: f64) -> Self {
        Self {
            mode: OracleMode::Distinctiveness { w_same, w_diff },
            noise: None,
        }
    }

    pub fn accuracy(p_coh_correct: f64, p_disp_correct: f64) -> Self {
        Self {
            mode: OracleMode::Accuracy {
                p_coh_correct,
                p_disp_correct,
            },
            noise: None,
        }
    }

    pub fn with_noise(self, ratio: f64, stddev: f64) -> Self {
        Self {
            noise: Some(OracleNoise { ratio, stddev }),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must lie in [0, 1]")))
            }
        };
        match self.mode {
            OracleMode::Distinctiveness { w_same, w_diff } => {
                unit("w_same", w_same)?;
                unit("w_diff", w_diff)?;
            }
            OracleMode::Accuracy {
                p_coh_correct,
                p_disp_correct,
            } => {
                unit("p_coh_correct", p_coh_correct)?;
                unit("p_disp_correct", p_disp_correct)?;
            }
        }
        if let Some(n) = self.noise {
            unit("noise ratio", n.ratio)?;
            if !(n.stddev >= 0.0 && n.stddev.is_finite()) {
                return Err(Error::Config(format!("noise stddev {} must be >= 0", n.stddev)));
            }
        }
        Ok(())
    }
}

/// Cohesive weights from labels, optionally corrupted on `round(ratio · m)`
/// random edges by Gaussian noise and clamped to `[0, 1]`.
pub fn oracle_weights(g: &Graph, spec: &OracleWeightSpec, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let labels = g.require_labels()?;
    let mut rng = SessionRng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut w: Vec<f64> = g
        .edges()
        .iter()
        .map(|&(u, v)| {
            let same = labels[u] == labels[v];
            match spec.mode {
                OracleMode::Distinctiveness { w_same, w_diff } => {
                    if same {
                        w_same
                    } else {
                        w_diff
                    }
                }
                OracleMode::Accuracy {
                    p_coh_correct,
                    p_disp_correct,
                } => {
                    let hit = |p: f64, rng: &mut SessionRng| rng.random::<f64>() < p;
                    if same {
                        if hit(p_coh_correct, &mut rng) { 1.0 } else { 0.0 }
                    } else if hit(p_disp_correct, &mut rng) {
                        0.0
                    } else {
                        1.0
                    }
                }
            }
        })
        .collect();
    if let Some(noise) = spec.noise {
        let m = w.len();
        let count = ((noise.ratio * m as f64).round() as usize).min(m);
        if count > 0 && noise.stddev > 0.0 {
            let normal = Normal::new(0.0, noise.stddev).expect("finite stddev");
            let mut picked = sample(&mut rng, m, count).into_vec();
            picked.sort_unstable();
            for e in picked {
                w[e] = (w[e] + normal.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
    }
    Ok(w)
}

/// Trains with the gate bypassed by oracle weights (seeded by `cfg.seed`),
/// then probes.
pub fn oracle_weight_run(
    g: &Graph,
    spec: &OracleWeightSpec,
    cfg: &TrainConfig,
    probe: &ProbeConfig,
) -> Result<ProbeResult> {
    let w = oracle_weights(g, spec, cfg.seed)?;
    let cfg = TrainConfig {
        view_mode: ViewMode::Fixed(Arc::new(w)),
        ..cfg.clone()
    };
    train_and_probe(g, &cfg, probe)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// Per-epoch masked reconstruction loss of each arm.
    pub model: Vec<f64>,
    pub naive_heterogeneous: Vec<f64>,
    pub naive_homogeneous: Option<Vec<f64>>,
    pub volatility_model: f64,
    pub volatility_heterogeneous: f64,
    pub volatility_homogeneous: Option<f64>,
    pub final_model: f64,
    pub final_heterogeneous: f64,
}

impl StabilityReport {
    /// Model volatility over heterogeneous-baseline volatility.
    pub fn volatility_ratio(&self) -> f64 {
        self.volatility_model / self.volatility_heterogeneous
    }
}

/// Masked reconstruction loss per epoch of one naive pool.
pub fn naive_stability_arm(g: &Graph, cfg: &TrainConfig, pool: NaivePool) -> Result<Vec<f64>> {
    let ctx = GraphContext::new(g, cfg)?;
    Ok(naive_moe_baseline(&ctx, cfg, pool)?.iter().map(|r| r.l_mae).collect())
}

/// Both architectures with the same seed, epochs and learning rate; curves
/// compare the masked reconstruction term, which is the only objective the
/// flat baseline has.
pub fn stability_bench(g: &Graph, cfg: &TrainConfig, homogeneous: bool) -> Result<StabilityReport> {
    let (_, history) = train_embed(g, cfg)?;
    let model: Vec<f64> = history.iter().map(|r| r.l_mae).collect();
    let het = naive_stability_arm(g, cfg, NaivePool::Heterogeneous)?;
    let hom = if homogeneous {
        Some(naive_stability_arm(g, cfg, NaivePool::Homogeneous)?)
    } else {
        None
    };
    let last = |c: &[f64]| c.last().copied().unwrap_or(f64::NAN);
    Ok(StabilityReport {
        volatility_model: volatility(&model),
        volatility_heterogeneous: volatility(&het),
        volatility_homogeneous: hom.as_deref().map(volatility),
        final_model: last(&model),
        final_heterogeneous: last(&het),
        model,
        naive_heterogeneous: het,
        naive_homogeneous: hom,
    })
}

/// Hyper-parameter varied by a sensitivity sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityAxis {
    LambdaLoad,
    HiddenDim,
}

impl fmt::Display for SensitivityAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensitivityAxis::LambdaLoad => "lambda_load",
            SensitivityAxis::HiddenDim => "hidden_dim",
        })
    }
}

impl FromStr for SensitivityAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lambda_load" => Ok(SensitivityAxis::LambdaLoad),
            "hidden_dim" | "hidden" => Ok(SensitivityAxis::HiddenDim),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?} (expected lambda_load or hidden_dim)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    /// Mean probe accuracy per seed.
    pub accuracies: Vec<f64>,
    pub median: f64,
}

/// One session per (value, seed) pair, run on up to `jobs` threads.
pub fn sensitivity_sweep(
    g: &Graph,
    axis: SensitivityAxis,
    values: &[f64],
    cfg: &TrainConfig,
    probe: &ProbeConfig,
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sensitivity sweep needs at least one value"));
    }
    let mut runs = Vec::new();
    for &v in values {
        let mut c = cfg.clone();
        match axis {
            SensitivityAxis::LambdaLoad => c.lambda_load = v,
            SensitivityAxis::HiddenDim => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(Error::Config(format!("hidden_dim value {v} is not a positive integer")));
                }
                c.hidden = v as usize;
            }
        }
        c.validate()?;
        for &s in seeds {
            runs.push(TrainConfig { seed: s, ..c.clone() });
        }
    }
    let accs = par_map(jobs, runs, |c| Ok(train_and_probe(g, &c, probe)?.mean))?;
    Ok(values
        .iter()
        .zip(accs.chunks(seeds.len().max(1)))
        .map(|(&value, a)| SweepRow {
            value,
            accuracies: a.to_vec(),
            median: median(a),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_sbm, SbmConfig};

    fn sbm() -> Graph {
        gen_sbm(&SbmConfig {
            n_per_block: 20,
            feat_dim: 4,
            ..SbmConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn distinctiveness_follows_labels() {
        let g = sbm();
        let labels = g.labels().unwrap();
        let w = oracle_weights(&g, &OracleWeightSpec::distinct(0.9, 0.1), 0).unwrap();
        for (e, &(u, v)) in g.edges().iter().enumerate() {
            assert_eq!(w[e], if labels[u] == labels[v] { 0.9 } else { 0.1 });
        }
    }

    #[test]
    fn perfect_accuracy_is_binary() {
        let g = sbm();
        let labels = g.labels().unwrap();
        let w = oracle_weights(&g, &OracleWeightSpec::accuracy(1.0, 1.0), 0).unwrap();
        for (e, &(u, v)) in g.edges().iter().enumerate() {
            assert_eq!(w[e], if labels[u] == labels[v] { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn noise_touches_the_requested_fraction() {
        let g = sbm();
        let base = OracleWeightSpec::distinct(0.5, 0.5);
        let w = oracle_weights(&g, &base.with_noise(0.2, 0.5), 1).unwrap();
        let changed = w.iter().filter(|&&x| x != 0.5).count();
        let expect = (0.2 * g.n_edges() as f64).round() as usize;
        assert_eq!(changed, expect);
        assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
        let clean = oracle_weights(&g, &base.with_noise(0.0, 0.5), 1).unwrap();
        assert!(clean.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(OracleWeightSpec::distinct(1.2, 0.0).validate().is_err());
        assert!(OracleWeightSpec::distinct(1.0, 0.0).with_noise(0.5, -1.0).validate().is_err());
        let unlabeled = Graph::new([(0, 1)], ndarray::Array2::zeros((2, 1)), None).unwrap();
        assert!(oracle_weights(&unlabeled, &OracleWeightSpec::distinct(1.0, 0.0), 0).is_err());
    }

    #[test]
    fn self_vs_self_stability_ratio_is_one() {
        let g = sbm();
        let cfg = TrainConfig {
            hidden: 8,
            gate_hidden: 8,
            epochs: 8,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let a = naive_stability_arm(&g, &cfg, NaivePool::Heterogeneous).unwrap();
        let b = naive_stability_arm(&g, &cfg, NaivePool::Heterogeneous).unwrap();
        assert_eq!(volatility(&a) / volatility(&b), 1.0);
    }

    #[test]
    fn single_value_sweep() {
        let g = sbm();
        let cfg = TrainConfig {
            hidden: 8,
            gate_hidden: 8,
            epochs: 2,
            ..TrainConfig::default()
        };
        let probe = ProbeConfig {
            steps: 20,
            repeats: 1,
            ..ProbeConfig::default()
        };
        let rows = sensitivity_sweep(&g, SensitivityAxis::LambdaLoad, &[0.1], &cfg, &probe, &[0, 1], 2).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].accuracies.len(), 2);
    }
}
