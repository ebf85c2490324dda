use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::Graph;
use crate::error::{Error, Result};
use crate::io::write_text;
use crate::SessionRng;

/// Disjoint train / validation / test node sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

fn count(frac: f64, size: usize) -> usize {
    (frac * size as f64).round() as usize
}

/// Random split, stratified by label when labels exist.
pub fn make_splits(g: &Graph, fractions: (f64, f64, f64), seed: u64) -> Result<SplitSpec> {
    let (tr, va, te) = fractions;
    if tr <= 0.0 || va < 0.0 || te <= 0.0 || tr + va + te > 1.0 + 1e-12 {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be positive and sum to at most 1"
        )));
    }
    let mut rng = SessionRng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match g.labels() {
        Some(labels) => {
            let k = g.n_classes().unwrap_or(0);
            let mut groups = vec![Vec::new(); k];
            for (i, &l) in labels.iter().enumerate() {
                groups[l].push(i);
            }
            groups.retain(|m| !m.is_empty());
            groups
        }
        None => vec![(0..g.n_nodes()).collect()],
    };
    let mut spec = SplitSpec {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (c, mut members) in groups.into_iter().enumerate() {
        members.shuffle(&mut rng);
        let size = members.len();
        let n_tr = count(tr, size);
        if n_tr == 0 {
            return Err(Error::invalid(format!(
                "class group {c} with {size} members yields no training example"
            )));
        }
        let n_va = count(va, size).min(size - n_tr);
        let n_te = count(te, size).min(size - n_tr - n_va);
        spec.train.extend_from_slice(&members[..n_tr]);
        spec.val.extend_from_slice(&members[n_tr..n_tr + n_va]);
        spec.test.extend_from_slice(&members[n_tr + n_va..n_tr + n_va + n_te]);
    }
    spec.train.sort_unstable();
    spec.val.sort_unstable();
    spec.test.sort_unstable();
    Ok(spec)
}

/// `index set_name` lines.
pub fn write_splits(path: &Path, spec: &SplitSpec) -> Result<()> {
    let mut text = String::new();
    for (name, set) in [("train", &spec.train), ("val", &spec.val), ("test", &spec.test)] {
        for i in set {
            text.push_str(&format!("{i} {name}\n"));
        }
    }
    write_text(path, &text)
}

pub fn read_splits(path: &Path) -> Result<SplitSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut spec = SplitSpec {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed: 0,
    };
    for (no, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: no + 1,
            msg,
        };
        if fields.len() != 2 {
            return Err(err("expected `index set_name`".into()));
        }
        let i: usize = fields[0].parse().map_err(|_| err(format!("bad index {:?}", fields[0])))?;
        match fields[1] {
            "train" => spec.train.push(i),
            "val" => spec.val.push(i),
            "test" => spec.test.push(i),
            other => return Err(err(format!("unknown set {other:?}"))),
        }
    }
    Ok(spec)
}
