//! Graph directory format: `edges.tsv` (one `u v` pair per line, 0-indexed),
//! `features.tsv` (one whitespace-separated row per node) and an optional
//! `labels.tsv` (one integer per line).

use std::fs;
use std::path::Path;

use super::Graph;
use crate::error::{Error, Result};
use crate::io::{matrix_to_tsv, read_matrix_tsv, write_text};

pub fn load_graph(dir: &Path) -> Result<Graph> {
    let features_path = dir.join("features.tsv");
    let edges_path = dir.join("edges.tsv");
    let labels_path = dir.join("labels.tsv");

    let features = read_matrix_tsv(&features_path)?;
    let n = features.nrows();
    if n == 0 {
        return Err(Error::Parse {
            path: features_path,
            line: 1,
            msg: "no feature rows".into(),
        });
    }

    let text = fs::read_to_string(&edges_path).map_err(|e| Error::io(&edges_path, e))?;
    let mut edges = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: edges_path.clone(),
            line: no + 1,
            msg,
        };
        if fields.len() != 2 {
            return Err(err(format!("expected 2 node indices, got {}", fields.len())));
        }
        let idx = |t: &str| -> Result<usize> {
            let i: usize = t.parse().map_err(|_| err(format!("invalid node index {t:?}")))?;
            if i >= n {
                return Err(err(format!("node index {i} out of range for {n} nodes")));
            }
            Ok(i)
        };
        edges.push((idx(fields[0])?, idx(fields[1])?));
    }

    let labels = if labels_path.exists() {
        let text = fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
        let mut labels = Vec::with_capacity(n);
        for (no, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let l: usize = t.parse().map_err(|_| Error::Parse {
                path: labels_path.clone(),
                line: no + 1,
                msg: format!("invalid label {t:?}"),
            })?;
            labels.push(l);
        }
        if labels.len() != n {
            return Err(Error::Parse {
                path: labels_path,
                line: labels.len(),
                msg: format!("{} labels for {n} nodes", labels.len()),
            });
        }
        Some(labels)
    } else {
        None
    };

    Graph::new(edges, features, labels)
}

pub fn save_graph(dir: &Path, g: &Graph) -> Result<()> {
    let mut edges = String::new();
    for &(u, v) in g.edges() {
        edges.push_str(&format!("{u} {v}\n"));
    }
    write_text(&dir.join("edges.tsv"), &edges)?;
    write_text(&dir.join("features.tsv"), &matrix_to_tsv(g.features()))?;
    if let Some(labels) = g.labels() {
        let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
        write_text(&dir.join("labels.tsv"), &text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    #[test]
    fn minimal_graph() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "edges.tsv", "0 1\n");
        write(dir.path(), "features.tsv", "1 0\n0 1\n");
        let g = load_graph(dir.path()).unwrap();
        assert_eq!((g.n_nodes(), g.n_edges(), g.n_features()), (2, 1, 2));
        assert!(g.labels().is_none());
    }

    #[test]
    fn symmetrises_and_strips_self_loops() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "edges.tsv", "0 1\n1 0\n2 2\n\n1 2\n");
        write(dir.path(), "features.tsv", "1\n2\n3\n");
        write(dir.path(), "labels.tsv", "0\n1\n1\n");
        let g = load_graph(dir.path()).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.n_classes(), Some(2));
    }

    #[test]
    fn index_out_of_range_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "edges.tsv", "0 1\n0 5\n");
        write(dir.path(), "features.tsv", "1\n2\n3\n");
        let msg = load_graph(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("edges.tsv:2") && msg.contains("out of range"), "{msg}");
    }

    #[test]
    fn ragged_features_report_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "edges.tsv", "");
        write(dir.path(), "features.tsv", "1 2\n3\n");
        let msg = load_graph(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("features.tsv:2") && msg.contains("ragged"), "{msg}");
    }

    #[test]
    fn non_finite_feature_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "edges.tsv", "");
        write(dir.path(), "features.tsv", "1\nnan\n");
        let msg = load_graph(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("features.tsv:2"), "{msg}");
    }

    #[test]
    fn missing_file() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "features.tsv", "1\n");
        let msg = load_graph(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("edges.tsv"), "{msg}");
    }

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::new(
            [(0, 2), (1, 2)],
            ndarray::array![[0.5], [1.25], [-3.0]],
            Some(vec![0, 1, 1]),
        )
        .unwrap();
        save_graph(dir.path(), &g).unwrap();
        let back = load_graph(dir.path()).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.features(), g.features());
        assert_eq!(back.labels(), g.labels());
    }
}
