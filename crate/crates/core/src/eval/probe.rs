use ndarray::{Array1, Axis};
use serde::Serialize;

use super::{mean_std, median};
use crate::autodiff::{AdamConfig, AdamState, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::graph::{make_splits, Graph, SplitSpec};
use crate::loss::cross_entropy;
use crate::Matrix;

/// Optimiser settings of the logistic-regression probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    /// Train / validation / test fractions of each split.
    pub fractions: (f64, f64, f64),
    pub repeats: usize,
    /// Rescale columns to zero mean and unit variance on the train rows.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.01,
            fractions: (0.48, 0.32, 0.2),
            repeats: 5,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub accuracies: Vec<f64>,
}

impl ProbeResult {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&accuracies);
        Self {
            mean,
            std,
            median: median(&accuracies),
            accuracies,
        }
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Column means and standard deviations of the rows in `idx`; zero
/// deviations become 1.
fn standardizer(x: &Matrix, idx: &[usize]) -> (Array1<f64>, Array1<f64>) {
    let sub = x.select(Axis(0), idx);
    let mean = sub.mean_axis(Axis(0)).expect("non-empty train split");
    let std = sub.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    (mean, std)
}

/// Multinomial logistic regression, optionally on standardised features.
#[derive(Debug, Clone)]
pub struct LogisticProbe {
    mean: Array1<f64>,
    scale: Array1<f64>,
    weights: Matrix,
    bias: Matrix,
}

impl LogisticProbe {
    /// Full-batch Adam on the mean cross-entropy of the `train` rows, from
    /// zero initial weights.
    pub fn fit(x: &Matrix, labels: &[usize], n_classes: usize, train: &[usize], cfg: &ProbeConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid("probe needs a non-empty train set"));
        }
        let first = labels[train[0]];
        if train.iter().all(|&i| labels[i] == first) {
            return Err(Error::invalid("probe train split contains a single class"));
        }
        let (mean, scale) = if cfg.standardize {
            standardizer(x, train)
        } else {
            (Array1::zeros(x.ncols()), Array1::ones(x.ncols()))
        };
        let xt = (&x.select(Axis(0), train) - &mean) / &scale;
        let yt: Vec<usize> = train.iter().map(|&i| labels[i]).collect();

        let mut store = ParamStore::new();
        let w = store.add_zeros("probe.w", x.ncols(), n_classes);
        let b = store.add_zeros("probe.b", 1, n_classes);
        let mut opt = AdamState::new(&store, vec![w, b], AdamConfig::with_lr(cfg.lr));
        for _ in 0..cfg.steps {
            let mut tape = Tape::new();
            let xv = tape.constant(xt.clone());
            let wv = tape.param(&store, w, true);
            let bv = tape.param(&store, b, true);
            let logits = tape.matmul(xv, wv)?;
            let logits = tape.add_row(logits, bv)?;
            let loss = cross_entropy(&mut tape, logits, &yt)?;
            tape.backward(loss)?;
            tape.accumulate_grads(&mut store);
            opt.step(&mut store);
        }
        Ok(Self {
            mean,
            scale,
            weights: store.value(w).clone(),
            bias: store.value(b).clone(),
        })
    }

    /// Predicted class of each row in `idx`.
    pub fn predict(&self, x: &Matrix, idx: &[usize]) -> Vec<usize> {
        let z = (&x.select(Axis(0), idx) - &self.mean) / &self.scale;
        let logits = z.dot(&self.weights) + &self.bias;
        logits.rows().into_iter().map(argmax).collect()
    }
}

/// Trains on `train` and returns the accuracy on `test`.
pub fn probe_split(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    train: &[usize],
    test: &[usize],
    cfg: &ProbeConfig,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("probe needs a non-empty test set"));
    }
    let model = LogisticProbe::fit(x, labels, n_classes, train, cfg)?;
    let correct = model
        .predict(x, test)
        .iter()
        .zip(test)
        .filter(|(&p, &i)| p == labels[i])
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Probe over explicit splits.
pub fn linear_probe(
    embeddings: &Matrix,
    labels: &[usize],
    splits: &[SplitSpec],
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::Shape {
            op: "linear_probe",
            left: embeddings.dim(),
            right: (labels.len(), 1),
        });
    }
    if splits.is_empty() {
        return Err(Error::invalid("linear probe needs at least one split"));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let accs = splits
        .iter()
        .map(|s| probe_split(embeddings, labels, n_classes, &s.train, &s.test, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeResult::from_accuracies(accs))
}

/// Stratified splits seeded `seed, seed + 1, …` (`cfg.repeats` of them).
pub fn probe_splits(g: &Graph, cfg: &ProbeConfig, seed: u64) -> Result<Vec<SplitSpec>> {
    (0..cfg.repeats as u64)
        .map(|r| make_splits(g, cfg.fractions, seed.wrapping_add(r)))
        .collect()
}

/// Probe of `embeddings` on `g`'s labels with freshly drawn splits.
pub fn probe_graph(embeddings: &Matrix, g: &Graph, cfg: &ProbeConfig, seed: u64) -> Result<ProbeResult> {
    let labels = g.require_labels()?;
    let splits = probe_splits(g, cfg, seed)?;
    linear_probe(embeddings, labels, &splits, cfg)
}

/// Majority-class frequency of `labels` over `idx`.
pub fn majority_rate(labels: &[usize], idx: &[usize]) -> f64 {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    for &i in idx {
        counts[labels[i]] += 1;
    }
    *counts.iter().max().unwrap_or(&0) as f64 / idx.len().max(1) as f64
}
