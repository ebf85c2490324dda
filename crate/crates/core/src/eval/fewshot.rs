use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::Serialize;

use super::{mean_std, median};
use crate::error::{Error, Result};
use crate::{Matrix, SessionRng};

/// Tasks per few-shot evaluation.
pub const DEFAULT_TASKS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewShotResult {
    pub k_shot: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub accuracies: Vec<f64>,
}

/// Class means of the support rows.
pub fn prototypes(embeddings: &Matrix, labels: &[usize], support: &[usize], n_classes: usize) -> Result<Matrix> {
    let mut sums = Array2::zeros((n_classes, embeddings.ncols()));
    let mut counts = vec![0usize; n_classes];
    for &i in support {
        sums.row_mut(labels[i]).scaled_add(1.0, &embeddings.row(i));
        counts[labels[i]] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("class {c} has no support node")));
    }
    for (c, mut row) in sums.axis_iter_mut(Axis(0)).enumerate() {
        row /= counts[c] as f64;
    }
    Ok(sums)
}

/// Nearest prototype by Euclidean distance, lowest class id on ties.
pub fn nearest(protos: &Matrix, q: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, p) in protos.rows().into_iter().enumerate() {
        let d: f64 = p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Accuracy of nearest-prototype classification of `queries`.
pub fn prototype_fewshot(
    embeddings: &Matrix,
    labels: &[usize],
    support: &[usize],
    queries: &[usize],
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::invalid("few-shot task without queries"));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let protos = prototypes(embeddings, labels, support, n_classes)?;
    let correct = queries
        .iter()
        .filter(|&&i| nearest(&protos, embeddings.row(i)) == labels[i])
        .count();
    Ok(correct as f64 / queries.len() as f64)
}

/// Draws `k` support nodes per class; every other node is a query.
pub fn sample_task(labels: &[usize], k: usize, rng: &mut SessionRng) -> Result<(Vec<usize>, Vec<usize>)> {
    if k == 0 {
        return Err(Error::invalid("k-shot needs k >= 1"));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut support = Vec::with_capacity(k * n_classes);
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() <= k {
            return Err(Error::invalid(format!(
                "class {c} has {} nodes, too few for {k}-shot tasks with queries",
                members.len()
            )));
        }
        members.shuffle(rng);
        support.extend_from_slice(&members[..k]);
    }
    support.sort_unstable();
    let queries = (0..labels.len()).filter(|i| support.binary_search(i).is_err()).collect();
    Ok((support, queries))
}

/// Repeated k-shot tasks from one seeded generator.
pub fn fewshot_tasks(
    embeddings: &Matrix,
    labels: &[usize],
    k: usize,
    n_tasks: usize,
    seed: u64,
) -> Result<FewShotResult> {
    let mut rng = SessionRng::seed_from_u64(seed);
    let mut accs = Vec::with_capacity(n_tasks);
    for _ in 0..n_tasks {
        let (support, queries) = sample_task(labels, k, &mut rng)?;
        accs.push(prototype_fewshot(embeddings, labels, &support, &queries)?);
    }
    let (mean, std) = mean_std(&accs);
    Ok(FewShotResult {
        k_shot: k,
        mean,
        std,
        median: median(&accs),
        accuracies: accs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn query_on_support_point_is_correct() {
        let e = array![[0.0, 0.0], [5.0, 5.0], [0.0, 0.0]];
        assert_eq!(prototype_fewshot(&e, &[0, 1, 0], &[0, 1], &[2]).unwrap(), 1.0);
    }

    #[test]
    fn equidistant_tie_picks_class_zero() {
        let protos = array![[1.0, 0.0], [-1.0, 0.0]];
        assert_eq!(nearest(&protos, array![0.0, 3.0].view()), 0);
    }

    #[test]
    fn missing_class_rejected() {
        let e = array![[0.0], [1.0], [2.0]];
        assert!(prototype_fewshot(&e, &[0, 1, 1], &[1], &[2]).is_err());
    }

    #[test]
    fn gaussian_threshold_oracle() {
        // Support at the class centres (±1, 0); queries with unit noise are
        // classified by the sign of x, correct with probability Φ(1) ≈ 0.8413.
        let mut rng = SessionRng::seed_from_u64(11);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let n = 4000;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut e = Array2::zeros((n, 2));
        for i in 0..n {
            let centre = if labels[i] == 0 { 1.0 } else { -1.0 };
            let jitter = if i < 2 { 0.0 } else { 1.0 };
            e[[i, 0]] = centre + jitter * noise.sample(&mut rng);
            e[[i, 1]] = jitter * noise.sample(&mut rng);
        }
        let queries: Vec<usize> = (2..n).collect();
        let acc = prototype_fewshot(&e, &labels, &[0, 1], &queries).unwrap();
        assert!((acc - 0.8413).abs() < 0.05, "{acc}");
    }

    #[test]
    fn task_sampling_is_seeded() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let e = Array2::from_shape_fn((30, 2), |(i, j)| (i * (j + 1)) as f64);
        let a = fewshot_tasks(&e, &labels, 2, 10, 4).unwrap();
        let b = fewshot_tasks(&e, &labels, 2, 10, 4).unwrap();
        assert_eq!(a, b);
        let (s, q) = sample_task(&labels, 2, &mut SessionRng::seed_from_u64(0)).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(q.len(), 24);
    }
}
