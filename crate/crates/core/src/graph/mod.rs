//! Graph representation, normalised propagation operators, random-walk
//! structural embeddings and topological statistics.

mod io;
mod sbm;
mod splits;
mod stats;

use std::sync::Arc;

use ndarray::{s, Array2};

pub use self::io::{load_graph, save_graph};
pub use self::sbm::{gen_sbm, SbmConfig};
pub use self::splits::{make_splits, read_splits, write_splits, SplitSpec};
pub use self::stats::{clustering_coefficient, edge_homophily, local_homophily};

use crate::error::{Error, Result};
use crate::sparse::{Adjacency, CsrMatrix};
use crate::Matrix;

/// Default number of return-probability steps in a structural embedding.
pub const DEFAULT_STRUCT_DIM: usize = 8;

/// Immutable undirected graph with node features and optional labels.
#[derive(Debug, Clone)]
pub struct Graph {
    adj: Arc<Adjacency>,
    features: Matrix,
    labels: Option<Vec<usize>>,
    n_classes: Option<usize>,
}

impl Graph {
    /// Builds a graph from arbitrary pairs: symmetrises, deduplicates and
    /// drops self-loops. `features` fixes the node count.
    pub fn new(
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::invalid("graph has no nodes"));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("features contain non-finite values"));
        }
        let mut canon = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u != v {
                canon.push((u.min(v), u.max(v)));
            }
        }
        canon.sort_unstable();
        canon.dedup();
        let n_classes = match &labels {
            Some(l) => {
                if l.len() != n {
                    return Err(Error::invalid(format!(
                        "{} labels for {n} nodes",
                        l.len()
                    )));
                }
                Some(l.iter().max().map_or(0, |m| m + 1))
            }
            None => None,
        };
        Ok(Self {
            adj: Arc::new(Adjacency::new(n, canon)),
            features,
            labels,
            n_classes,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_edges(&self) -> usize {
        self.adj.n_edges()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        self.adj.edges()
    }

    pub fn adjacency(&self) -> &Arc<Adjacency> {
        &self.adj
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj.degree(i)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.n_classes
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::invalid("operation requires node labels"))
    }

    /// Copy with every feature row scaled to unit L2 norm (zero rows kept).
    pub fn with_row_normalized_features(&self) -> Self {
        let mut features = self.features.clone();
        for mut row in features.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row.mapv_inplace(|v| v / n);
            }
        }
        Self {
            features,
            ..self.clone()
        }
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Graph::new(self.edges().iter().copied(), self.features.clone(), Some(labels))
    }
}

/// Self-looped and normalised adjacency operators of a graph.
#[derive(Debug, Clone)]
pub struct NormalizedOps {
    /// `Â = A + I`.
    pub a_hat: Arc<CsrMatrix>,
    /// Diagonal of `D̂`, the row sums of `Â`.
    pub d_hat: Vec<f64>,
    /// `Ã = D̂^{-1/2} Â D̂^{-1/2}`.
    pub a_tilde: Arc<CsrMatrix>,
    /// Random-walk transition matrix `T = D̂^{-1} Â`.
    pub t_walk: Arc<CsrMatrix>,
}

pub fn normalize(g: &Graph) -> NormalizedOps {
    let n = g.n_nodes();
    let mut hat = Vec::with_capacity(n + 2 * g.n_edges());
    for i in 0..n {
        hat.push((i, i, 1.0));
    }
    for &(u, v) in g.edges() {
        hat.push((u, v, 1.0));
        hat.push((v, u, 1.0));
    }
    let d_hat: Vec<f64> = (0..n).map(|i| (g.degree(i) + 1) as f64).collect();
    let tilde: Vec<_> = hat
        .iter()
        .map(|&(i, j, v)| (i, j, v / (d_hat[i].sqrt() * d_hat[j].sqrt())))
        .collect();
    let walk: Vec<_> = hat.iter().map(|&(i, j, v)| (i, j, v / d_hat[i])).collect();
    NormalizedOps {
        a_hat: Arc::new(CsrMatrix::from_triplets(n, n, &hat)),
        d_hat,
        a_tilde: Arc::new(CsrMatrix::from_triplets(n, n, &tilde)),
        t_walk: Arc::new(CsrMatrix::from_triplets(n, n, &walk)),
    }
}

/// Per-node return probabilities `[T_kk, T²_kk, …, T^{d_s}_kk]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralEmbedding(pub Matrix);

impl StructuralEmbedding {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

const PROBE_BLOCK: usize = 512;

/// Propagates blocks of indicator columns through `T` and reads off the
/// diagonal after every step, so memory stays at `n × PROBE_BLOCK`.
pub fn structural_embeddings(ops: &NormalizedOps, d_s: usize) -> Result<StructuralEmbedding> {
    if d_s == 0 {
        return Err(Error::invalid("structural embedding dimension must be >= 1"));
    }
    let n = ops.d_hat.len();
    let mut out = Array2::zeros((n, d_s));
    let mut start = 0;
    while start < n {
        let width = PROBE_BLOCK.min(n - start);
        let mut probe: Matrix = Array2::zeros((n, width));
        for c in 0..width {
            probe[[start + c, c]] = 1.0;
        }
        for p in 0..d_s {
            probe = ops.t_walk.matmul_dense(&probe);
            for c in 0..width {
                out[[start + c, p]] = probe[[start + c, c]];
            }
        }
        start += width;
    }
    Ok(StructuralEmbedding(out))
}

/// `[X | S]`, the per-node gate input.
pub fn node_descriptor(features: &Matrix, s: &StructuralEmbedding) -> Matrix {
    let (n, f) = (features.nrows(), features.ncols());
    let mut out = Array2::zeros((n, f + s.dim()));
    out.slice_mut(s![.., ..f]).assign(features);
    out.slice_mut(s![.., f..]).assign(&s.0);
    out
}
