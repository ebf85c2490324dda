use super::Graph;
use crate::error::Result;

/// Sentinel local homophily of an isolated node.
pub const ISOLATED_HOMOPHILY: f64 = -1.0;

/// Fraction of each node's neighbours that share its label; isolated nodes
/// get [`ISOLATED_HOMOPHILY`].
pub fn local_homophily(g: &Graph) -> Result<Vec<f64>> {
    let labels = g.require_labels()?;
    let adj = g.adjacency();
    Ok((0..g.n_nodes())
        .map(|i| {
            let deg = adj.degree(i);
            if deg == 0 {
                return ISOLATED_HOMOPHILY;
            }
            let same = adj.neighbors(i).filter(|&(j, _)| labels[j] == labels[i]).count();
            same as f64 / deg as f64
        })
        .collect())
}

/// Fraction of edges whose endpoints share a label (0 for an edgeless graph).
pub fn edge_homophily(g: &Graph) -> Result<f64> {
    let labels = g.require_labels()?;
    if g.n_edges() == 0 {
        return Ok(0.0);
    }
    let same = g.edges().iter().filter(|&&(u, v)| labels[u] == labels[v]).count();
    Ok(same as f64 / g.n_edges() as f64)
}

/// Local clustering coefficient `2·tri(i) / (deg(i)(deg(i) − 1))`; nodes
/// with degree below two get 0.
pub fn clustering_coefficient(g: &Graph) -> Vec<f64> {
    let adj = g.adjacency();
    (0..g.n_nodes())
        .map(|i| {
            let deg = adj.degree(i);
            if deg < 2 {
                return 0.0;
            }
            let nbrs: Vec<usize> = adj.neighbors(i).map(|(j, _)| j).collect();
            let mut links = 0usize;
            for (a, &u) in nbrs.iter().enumerate() {
                for &v in &nbrs[a + 1..] {
                    if adj.has_edge(u, v) {
                        links += 1;
                    }
                }
            }
            2.0 * links as f64 / (deg * (deg - 1)) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn graph(n: usize, edges: &[(usize, usize)], labels: Option<Vec<usize>>) -> Graph {
        Graph::new(edges.iter().copied(), Array2::zeros((n, 1)), labels).unwrap()
    }

    #[test]
    fn star_same_label() {
        let g = graph(4, &[(0, 1), (0, 2), (0, 3)], Some(vec![0; 4]));
        assert_eq!(local_homophily(&g).unwrap()[0], 1.0);
        assert_eq!(clustering_coefficient(&g)[0], 0.0);
    }

    #[test]
    fn path_different_labels() {
        let g = graph(2, &[(0, 1)], Some(vec![0, 1]));
        assert_eq!(local_homophily(&g).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn isolated_sentinel_and_missing_labels() {
        let g = graph(3, &[(0, 1)], Some(vec![0, 0, 1]));
        assert_eq!(local_homophily(&g).unwrap()[2], ISOLATED_HOMOPHILY);
        assert!(local_homophily(&graph(2, &[(0, 1)], None)).is_err());
    }

    #[test]
    fn cliques_have_unit_clustering() {
        let k3 = graph(3, &[(0, 1), (1, 2), (0, 2)], None);
        assert_eq!(clustering_coefficient(&k3), vec![1.0; 3]);
        let k4 = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], None);
        assert_eq!(clustering_coefficient(&k4), vec![1.0; 4]);
    }
}
