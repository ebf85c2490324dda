//! Compressed sparse row storage and the undirected adjacency index shared by
//! every propagation kernel.

use ndarray::{Array2, Zip};

use crate::Matrix;

/// Constant sparse matrix in CSR layout. Duplicate coordinates are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                out[[i, j]] += v;
            }
        }
        out
    }

    /// `self · x`.
    pub fn matmul_dense(&self, x: &Matrix) -> Matrix {
        assert_eq!(self.n_cols, x.nrows(), "csr matmul inner dimension");
        let mut out = Array2::zeros((self.n_rows, x.ncols()));
        for i in 0..self.n_rows {
            let mut acc = out.row_mut(i);
            for (j, v) in self.row(i) {
                acc.scaled_add(v, &x.row(j));
            }
        }
        out
    }

    /// `selfᵀ · g`.
    pub fn t_matmul_dense(&self, g: &Matrix) -> Matrix {
        assert_eq!(self.n_rows, g.nrows(), "csr transposed matmul inner dimension");
        let mut out = Array2::zeros((self.n_cols, g.ncols()));
        for i in 0..self.n_rows {
            let gi = g.row(i);
            for (j, v) in self.row(i) {
                out.row_mut(j).scaled_add(v, &gi);
            }
        }
        out
    }
}

/// Symmetric adjacency over undirected edges `(u, v)` with `u < v`.
///
/// Every edge appears as two arcs in the row index; each arc remembers the
/// undirected edge id so per-edge weights can be shared by both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    n: usize,
    edges: Vec<(usize, usize)>,
    indptr: Vec<usize>,
    neighbors: Vec<usize>,
    edge_ids: Vec<usize>,
}

impl Adjacency {
    /// `edges` must already be canonical (u < v, sorted, unique).
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut degree = vec![0usize; n];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut indptr = vec![0usize; n + 1];
        for i in 0..n {
            indptr[i + 1] = indptr[i] + degree[i];
        }
        let mut fill = indptr.clone();
        let mut neighbors = vec![0usize; 2 * edges.len()];
        let mut edge_ids = vec![0usize; 2 * edges.len()];
        for (e, &(u, v)) in edges.iter().enumerate() {
            neighbors[fill[u]] = v;
            edge_ids[fill[u]] = e;
            fill[u] += 1;
            neighbors[fill[v]] = u;
            edge_ids[fill[v]] = e;
            fill[v] += 1;
        }
        // Sort each row by neighbor so iteration order is canonical.
        for i in 0..n {
            let span = indptr[i]..indptr[i + 1];
            let mut row: Vec<(usize, usize)> = neighbors[span.clone()]
                .iter()
                .copied()
                .zip(edge_ids[span.clone()].iter().copied())
                .collect();
            row.sort_unstable();
            for (k, (j, e)) in row.into_iter().enumerate() {
                neighbors[span.start + k] = j;
                edge_ids[span.start + k] = e;
            }
        }
        Self {
            n,
            edges,
            indptr,
            neighbors,
            edge_ids,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    /// `(neighbor, edge_id)` pairs of node `i`, sorted by neighbor.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.neighbors[span.clone()]
            .iter()
            .copied()
            .zip(self.edge_ids[span].iter().copied())
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let span = self.indptr[u]..self.indptr[u + 1];
        self.neighbors[span].binary_search(&v).is_ok()
    }

    /// Arc list `(row, col, edge_id)` in row-major order.
    pub fn arcs(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.neighbors.len());
        for i in 0..self.n {
            for (j, e) in self.neighbors(i) {
                out.push((i, j, e));
            }
        }
        out
    }

    /// `A_w · x` where `A_w` carries `w[e]` on both arcs of edge `e`.
    pub fn weighted_matmul(&self, w: &[f64], x: &Matrix) -> Matrix {
        assert_eq!(w.len(), self.edges.len(), "one weight per edge");
        assert_eq!(x.nrows(), self.n, "row count");
        let mut out = Array2::zeros((self.n, x.ncols()));
        for i in 0..self.n {
            let mut acc = out.row_mut(i);
            for (j, e) in self.neighbors(i) {
                acc.scaled_add(w[e], &x.row(j));
            }
        }
        out
    }

    /// Gradient of `<g, A_w x>` with respect to each edge weight:
    /// `g_u · x_v + g_v · x_u`.
    pub fn edge_weight_grad(&self, g: &Matrix, x: &Matrix) -> Vec<f64> {
        self.edges
            .iter()
            .map(|&(u, v)| {
                let a = Zip::from(g.row(u)).and(x.row(v)).fold(0.0, |s, &p, &q| s + p * q);
                let b = Zip::from(g.row(v)).and(x.row(u)).fold(0.0, |s, &p, &q| s + p * q);
                a + b
            })
            .collect()
    }

    /// Dense `A_w` for oracle comparisons.
    pub fn to_dense(&self, w: &[f64]) -> Matrix {
        let mut out = Array2::zeros((self.n, self.n));
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            out[[u, v]] = w[e];
            out[[v, u]] = w[e];
        }
        out
    }
}

/// Directed arcs `src → dst` into `n_out` destination rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arcs {
    pub dst: Vec<usize>,
    pub src: Vec<usize>,
    pub n_out: usize,
}

impl Arcs {
    pub fn new(dst: Vec<usize>, src: Vec<usize>, n_out: usize) -> Self {
        assert_eq!(dst.len(), src.len(), "one source per destination");
        assert!(dst.iter().all(|&i| i < n_out), "destination out of range");
        Self { dst, src, n_out }
    }

    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.to_dense(), array![[0.0, 3.0], [4.0, 0.0]]);
    }

    #[test]
    fn transpose_product_matches_dense() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.5), (1, 0, -2.0), (1, 1, 0.5)]);
        let g = array![[1.0, 2.0], [3.0, 4.0]];
        let dense = m.to_dense().t().dot(&g);
        assert_eq!(m.t_matmul_dense(&g), dense);
    }

    #[test]
    fn weighted_matmul_matches_dense() {
        let adj = Adjacency::new(3, vec![(0, 1), (1, 2)]);
        let w = [0.25, 0.75];
        let x = array![[1.0], [2.0], [3.0]];
        assert_eq!(adj.weighted_matmul(&w, &x), adj.to_dense(&w).dot(&x));
        assert!(adj.has_edge(2, 1));
        assert!(!adj.has_edge(0, 2));
    }
}
