use ndarray::{Array2, Axis};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix as CostMatrix;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::{Matrix, SessionRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterResult {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub assignment: Vec<usize>,
    pub centers: Matrix,
    pub inertia: f64,
}

const MAX_ITERS: usize = 300;

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn distinct_rows(x: &Matrix) -> usize {
    let mut rows: Vec<Vec<u64>> = x
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort();
    rows.dedup();
    rows.len()
}

fn plus_plus_init<R: Rng + ?Sized>(x: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = x.nrows();
    let mut centers = Array2::zeros((k, x.ncols()));
    centers.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    idx = i;
                    break;
                }
                t -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centers.row(c)));
        }
    }
    centers
}

/// One k-means++ seeded Lloyd run.
pub fn kmeans(x: &Matrix, k: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 || k > distinct_rows(x) {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} distinct points",
            distinct_rows(x)
        )));
    }
    let mut rng = SessionRng::seed_from_u64(seed);
    let mut centers = plus_plus_init(x, k, &mut rng);
    let n = x.nrows();
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, r) in x.rows().into_iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (c, ctr) in centers.rows().into_iter().enumerate() {
                let d = sq_dist(r, ctr);
                if d < best.1 {
                    best = (c, d);
                }
            }
            if assignment[i] != best.0 {
                assignment[i] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, r) in x.rows().into_iter().enumerate() {
            sums.row_mut(assignment[i]).scaled_add(1.0, &r);
            counts[assignment[i]] += 1;
        }
        for c in 0..k {
            // Empty clusters keep their previous centre.
            if counts[c] > 0 {
                centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
    }
    let inertia = x
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| sq_dist(r, centers.row(assignment[i])))
        .sum();
    Ok(KMeansFit {
        assignment,
        centers,
        inertia,
    })
}

/// Lowest-inertia fit among `seeds`.
pub fn kmeans_best(x: &Matrix, k: usize, seeds: &[u64]) -> Result<KMeansFit> {
    let mut best: Option<KMeansFit> = None;
    for &s in seeds {
        let fit = kmeans(x, k, s)?;
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::invalid("k-means needs at least one seed"))
}

/// `table[cluster][class]` counts.
pub fn contingency(pred: &[usize], truth: &[usize]) -> Array2<usize> {
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let mut t = Array2::zeros((kp, kt));
    for (&p, &y) in pred.iter().zip(truth) {
        t[[p, y]] += 1;
    }
    t
}

/// Accuracy under the best one-to-one cluster-to-class assignment.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let t = contingency(pred, truth);
    let side = t.nrows().max(t.ncols());
    let mut square = Array2::<i64>::zeros((side, side));
    for ((i, j), &v) in t.indexed_iter() {
        square[[i, j]] = v as i64;
    }
    let weights = CostMatrix::from_rows(square.rows().into_iter().map(|r| r.to_vec())).expect("square");
    let (total, _) = kuhn_munkres(&weights);
    total as f64 / pred.len() as f64
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies; 0 when
/// either labelling is constant.
pub fn nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let t = contingency(pred, truth);
    let hp = entropy(t.sum_axis(Axis(1)).into_iter(), n);
    let ht = entropy(t.sum_axis(Axis(0)).into_iter(), n);
    if hp <= 0.0 || ht <= 0.0 {
        return 0.0;
    }
    let rows = t.sum_axis(Axis(1));
    let cols = t.sum_axis(Axis(0));
    let mut mi = 0.0;
    for ((i, j), &c) in t.indexed_iter() {
        if c > 0 {
            let c = c as f64;
            mi += c / n * (c * n / (rows[i] as f64 * cols[j] as f64)).ln();
        }
    }
    (mi / (0.5 * (hp + ht))).clamp(0.0, 1.0)
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index. Two identical trivial labellings give 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> f64 {
    let t = contingency(pred, truth);
    let index: f64 = t.iter().map(|&c| comb2(c)).sum();
    let a: f64 = t.sum_axis(Axis(1)).iter().map(|&c| comb2(c)).sum();
    let b: f64 = t.sum_axis(Axis(0)).iter().map(|&c| comb2(c)).sum();
    let total = comb2(pred.len());
    let expected = a * b / total;
    let max = 0.5 * (a + b);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// k-means with `k` clusters (best of `seeds`) scored against `labels`.
pub fn kmeans_eval(embeddings: &Matrix, labels: &[usize], k: usize, seeds: &[u64]) -> Result<ClusterResult> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::Shape {
            op: "kmeans_eval",
            left: embeddings.dim(),
            right: (labels.len(), 1),
        });
    }
    let fit = kmeans_best(embeddings, k, seeds)?;
    Ok(ClusterResult {
        acc: clustering_accuracy(&fit.assignment, labels),
        nmi: nmi(&fit.assignment, labels),
        ari: ari(&fit.assignment, labels),
    })
}
