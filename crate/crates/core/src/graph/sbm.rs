use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::SessionRng;

/// Stochastic block model with Gaussian block-mean features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub n_per_block: usize,
    pub k_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feat_dim: usize,
    pub feat_signal: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            n_per_block: 100,
            k_blocks: 2,
            p_in: 0.5,
            p_out: 0.05,
            feat_dim: 16,
            feat_signal: 2.0,
            seed: 0,
        }
    }
}

/// Samples every node pair independently with `p_in` inside a block and
/// `p_out` across blocks. Block `b` has mean `feat_signal · e_b` (pairwise
/// orthogonal, so `feat_dim >= k_blocks`) plus unit Gaussian noise; labels
/// are block ids.
pub fn gen_sbm(cfg: &SbmConfig) -> Result<Graph> {
    let SbmConfig {
        n_per_block,
        k_blocks,
        p_in,
        p_out,
        feat_dim,
        feat_signal,
        seed,
    } = *cfg;
    if n_per_block == 0 || k_blocks == 0 {
        return Err(Error::invalid("sbm needs at least one block with one node"));
    }
    if feat_dim < k_blocks {
        return Err(Error::invalid(format!(
            "feat_dim {feat_dim} cannot hold {k_blocks} orthogonal block means"
        )));
    }
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("{name} = {p} is not a probability")));
        }
    }
    let n = n_per_block * k_blocks;
    let labels: Vec<usize> = (0..n).map(|i| i / n_per_block).collect();
    let mut rng = SessionRng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let mut features = Array2::zeros((n, feat_dim));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        for v in row.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        row[labels[i]] += feat_signal;
    }
    Graph::new(edges, features, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::edge_homophily;

    fn cfg(n: usize, k: usize, p_in: f64, p_out: f64) -> SbmConfig {
        SbmConfig {
            n_per_block: n,
            k_blocks: k,
            p_in,
            p_out,
            ..SbmConfig::default()
        }
    }

    #[test]
    fn disjoint_triangles() {
        let g = gen_sbm(&cfg(3, 2, 1.0, 0.0)).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]);
        assert_eq!(edge_homophily(&g).unwrap(), 1.0);
    }

    #[test]
    fn complete_bipartite() {
        let g = gen_sbm(&cfg(4, 2, 0.0, 1.0)).unwrap();
        assert_eq!(g.n_edges(), 16);
        assert_eq!(edge_homophily(&g).unwrap(), 0.0);
    }

    #[test]
    fn edge_count_within_binomial_band() {
        let g = gen_sbm(&SbmConfig {
            seed: 7,
            ..cfg(100, 2, 0.5, 0.05)
        })
        .unwrap();
        let pairs_in = 2.0 * (100.0 * 99.0 / 2.0);
        let pairs_out = 100.0 * 100.0;
        let mean = 0.5 * pairs_in + 0.05 * pairs_out;
        let var = 0.25 * pairs_in + 0.05 * 0.95 * pairs_out;
        let z = (g.n_edges() as f64 - mean) / var.sqrt();
        assert!((mean - 5450.0).abs() < 1e-9);
        assert!(z.abs() < 4.0, "edges {} z {z}", g.n_edges());
    }

    #[test]
    fn deterministic_and_validated() {
        let a = gen_sbm(&cfg(10, 3, 0.3, 0.1)).unwrap();
        let b = gen_sbm(&cfg(10, 3, 0.3, 0.1)).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.features(), b.features());
        assert!(gen_sbm(&cfg(0, 2, 0.5, 0.1)).is_err());
        assert!(gen_sbm(&cfg(5, 2, 1.5, 0.1)).is_err());
        assert!(gen_sbm(&SbmConfig {
            feat_dim: 1,
            ..cfg(5, 2, 0.5, 0.1)
        })
        .is_err());
    }
}
