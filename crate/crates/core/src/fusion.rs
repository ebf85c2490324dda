//! Node-wise blending of the cohesive and dispersive channels.
//!
//! The coefficient `α_i` mixes a structural cue (how strongly node `i`'s
//! edges were assigned to the cohesive view) with a semantic cue (how
//! similar `i`'s cohesive embedding is to its neighbours'), is smoothed by
//! one propagation step, and is then held constant for the gradient.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::autodiff::{Tape, Var, EPS};
use crate::error::{Error, Result};
use crate::graph::{Graph, NormalizedOps};
use crate::io::write_text;
use crate::Matrix;

/// Score given to nodes without neighbours.
pub const ISOLATED_SCORE: f64 = 0.5;

/// How the two channel embeddings are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    #[default]
    Adaptive,
    CohesiveOnly,
    DispersiveOnly,
    /// Constant `α = 0.5`.
    NaiveConcat,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Adaptive => "adaptive",
            FusionMode::CohesiveOnly => "cohesive_only",
            FusionMode::DispersiveOnly => "dispersive_only",
            FusionMode::NaiveConcat => "naive_concat",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adaptive" => Ok(FusionMode::Adaptive),
            "cohesive_only" => Ok(FusionMode::CohesiveOnly),
            "dispersive_only" => Ok(FusionMode::DispersiveOnly),
            "naive_concat" => Ok(FusionMode::NaiveConcat),
            other => Err(Error::Config(format!(
                "unknown fusion mode {other:?} (expected adaptive, cohesive_only, dispersive_only or naive_concat)"
            ))),
        }
    }
}

/// Statistic of incident edge weights used as the structural cue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightStatistic {
    #[default]
    Mean,
    Variance,
}

impl fmt::Display for WeightStatistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightStatistic::Mean => "mean",
            WeightStatistic::Variance => "variance",
        })
    }
}

impl FromStr for WeightStatistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(WeightStatistic::Mean),
            "variance" => Ok(WeightStatistic::Variance),
            other => Err(Error::Config(format!(
                "unknown weight statistic {other:?} (expected mean or variance)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionState {
    pub alpha_struct: Vec<f64>,
    pub alpha_sem: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Mean cosine between `h_i` and each neighbour's row, clamped to `[0, 1]`.
pub fn semantic_score(h_coh: &Matrix, g: &Graph) -> Vec<f64> {
    let norms: Vec<f64> = h_coh.rows().into_iter().map(|r| r.dot(&r).sqrt().max(EPS)).collect();
    let adj = g.adjacency();
    (0..g.n_nodes())
        .map(|i| {
            let deg = adj.degree(i);
            if deg == 0 {
                return ISOLATED_SCORE;
            }
            let hi = h_coh.row(i);
            let total: f64 = adj
                .neighbors(i)
                .map(|(j, _)| hi.dot(&h_coh.row(j)) / (norms[i] * norms[j]))
                .sum();
            (total / deg as f64).clamp(0.0, 1.0)
        })
        .collect()
}

/// Statistic of the eval-mode weights on edges incident to each node.
pub fn structural_score(w: &[f64], g: &Graph, stat: WeightStatistic) -> Vec<f64> {
    let adj = g.adjacency();
    (0..g.n_nodes())
        .map(|i| {
            let deg = adj.degree(i);
            if deg == 0 {
                return ISOLATED_SCORE;
            }
            let mean = adj.neighbors(i).map(|(_, e)| w[e]).sum::<f64>() / deg as f64;
            match stat {
                WeightStatistic::Mean => mean,
                WeightStatistic::Variance => {
                    adj.neighbors(i).map(|(_, e)| (w[e] - mean).powi(2)).sum::<f64>() / deg as f64
                }
            }
        })
        .collect()
}

/// One smoothing step `Ã · init`, clamped to `[0, 1]`.
pub fn propagate_alpha(init: &[f64], ops: &NormalizedOps) -> Vec<f64> {
    let col = Array2::from_shape_vec((init.len(), 1), init.to_vec()).expect("column");
    ops.a_tilde
        .matmul_dense(&col)
        .column(0)
        .iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect()
}

/// Both cues, their average and its smoothed version.
pub fn fusion_state(
    h_coh: &Matrix,
    w: &[f64],
    g: &Graph,
    ops: &NormalizedOps,
    stat: WeightStatistic,
) -> FusionState {
    let alpha_struct = structural_score(w, g, stat);
    let alpha_sem = semantic_score(h_coh, g);
    let init: Vec<f64> = alpha_struct
        .iter()
        .zip(&alpha_sem)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    FusionState {
        alpha: propagate_alpha(&init, ops),
        alpha_struct,
        alpha_sem,
    }
}

/// `[α ⊙ h_coh | (1 − α) ⊙ h_disp]`, with `α` a constant.
pub fn fuse(tape: &mut Tape, h_coh: Var, h_disp: Var, alpha: &[f64]) -> Result<Var> {
    let (sc, sd) = (tape.shape(h_coh), tape.shape(h_disp));
    if sc != sd {
        return Err(Error::Shape {
            op: "fuse",
            left: sc,
            right: sd,
        });
    }
    if alpha.len() != sc.0 {
        return Err(Error::Shape {
            op: "fuse",
            left: sc,
            right: (alpha.len(), 1),
        });
    }
    let a = tape.constant(Array2::from_shape_vec((alpha.len(), 1), alpha.to_vec()).expect("column"));
    let b = tape.constant(Array2::from_shape_fn((alpha.len(), 1), |(i, _)| 1.0 - alpha[i]));
    let left = tape.mul_col(h_coh, a)?;
    let right = tape.mul_col(h_disp, b)?;
    tape.hconcat(&[left, right])
}

/// `node alpha` per line.
pub fn write_alpha_tsv(path: &Path, alpha: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(alpha.len() * 16);
    for (i, a) in alpha.iter().enumerate() {
        out.push_str(&format!("{i}\t{a}\n"));
    }
    write_text(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::normalize;
    use ndarray::array;

    fn star3() -> Graph {
        Graph::new([(0, 1), (0, 2)], Array2::zeros((4, 1)), None).unwrap()
    }

    #[test]
    fn semantic_examples() {
        let g = star3();
        let h = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]];
        let s = semantic_score(&h, &g);
        assert!((s[0] - 0.5).abs() < 1e-12);
        assert!((s[1] - 1.0).abs() < 1e-12);
        assert_eq!(s[2], 0.0);
        assert_eq!(s[3], ISOLATED_SCORE);
        let neg = array![[1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]];
        assert_eq!(semantic_score(&neg, &g)[0], 0.0);
    }

    #[test]
    fn structural_examples() {
        let g = star3();
        let s = structural_score(&[0.8, 0.2], &g, WeightStatistic::Mean);
        assert!((s[0] - 0.5).abs() < 1e-12);
        assert_eq!(s[1], 0.8);
        assert_eq!(s[3], ISOLATED_SCORE);
        let v = structural_score(&[0.8, 0.2], &g, WeightStatistic::Variance);
        assert!((v[0] - 0.09).abs() < 1e-12);
    }

    #[test]
    fn propagation_examples() {
        let path = Graph::new([(0, 1)], Array2::zeros((2, 1)), None).unwrap();
        let a = propagate_alpha(&[1.0, 0.0], &normalize(&path));
        assert!((a[0] - 0.5).abs() < 1e-15 && (a[1] - 0.5).abs() < 1e-15);
        let lone = Graph::new([], Array2::zeros((1, 1)), None).unwrap();
        assert_eq!(propagate_alpha(&[0.3], &normalize(&lone)), vec![0.3]);
        let cycle = Graph::new([(0, 1), (1, 2), (2, 3), (3, 0)], Array2::zeros((4, 1)), None).unwrap();
        for v in propagate_alpha(&[0.7; 4], &normalize(&cycle)) {
            assert!((v - 0.7).abs() < 1e-10);
        }
    }

    #[test]
    fn fuse_examples() {
        let mut t = Tape::new();
        let c = t.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let d = t.constant(array![[5.0, 6.0], [7.0, 8.0]]);
        let f = fuse(&mut t, c, d, &[1.0, 1.0]).unwrap();
        assert_eq!(t.value(f), &array![[1.0, 2.0, 0.0, 0.0], [3.0, 4.0, 0.0, 0.0]]);
        let f = fuse(&mut t, c, d, &[0.5, 0.5]).unwrap();
        assert_eq!(t.value(f), &array![[0.5, 1.0, 2.5, 3.0], [1.5, 2.0, 3.5, 4.0]]);
        assert!(fuse(&mut t, c, d, &[0.5]).is_err());
    }

    #[test]
    fn alpha_tsv_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("alpha.tsv");
        write_alpha_tsv(&p, &[0.25, 1.0]).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "0\t0.25\n1\t1\n");
    }
}
