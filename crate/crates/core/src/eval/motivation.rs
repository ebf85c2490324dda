use serde::Serialize;

use super::probe::{LogisticProbe, ProbeConfig};
use crate::autodiff::Tape;
use crate::error::Result;
use crate::filters::{apply_filter, FilterSpec, WeightedView};
use crate::graph::{clustering_coefficient, local_homophily, make_splits, Graph};
use crate::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct MotivationConfig {
    pub low_pass: FilterSpec,
    pub high_pass: FilterSpec,
    pub shallow: FilterSpec,
    pub deep: FilterSpec,
    pub n_buckets: usize,
    pub probe: ProbeConfig,
    pub seed: u64,
}

impl Default for MotivationConfig {
    fn default() -> Self {
        Self {
            low_pass: FilterSpec::sgc(2),
            high_pass: FilterSpec::lapsgc(2, 1.0).expect("valid alpha"),
            shallow: FilterSpec::sgc(1),
            deep: FilterSpec::sgc(4),
            n_buckets: 5,
            probe: ProbeConfig::default(),
            seed: 0,
        }
    }
}

/// Test-node accuracy of two filters inside one bucket, pooled over splits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRow {
    pub bucket: usize,
    pub lo: f64,
    pub hi: f64,
    pub n_test: usize,
    pub acc_a: f64,
    pub acc_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotivationReport {
    pub filter_a_homophily: String,
    pub filter_b_homophily: String,
    /// Local-homophily quantile buckets, low-pass (a) vs high-pass (b).
    pub homophily: Vec<BucketRow>,
    pub filter_a_clustering: String,
    pub filter_b_clustering: String,
    /// Clustering-coefficient quantile buckets, shallow (a) vs deep (b).
    pub clustering: Vec<BucketRow>,
}

/// Parameter-free filter output on the unweighted graph.
pub fn filter_embedding(g: &Graph, spec: &FilterSpec) -> Result<Matrix> {
    let mut tape = Tape::new();
    let view = WeightedView::unweighted(&mut tape, g.adjacency())?;
    let x = tape.constant(g.features().clone());
    let h = apply_filter(&mut tape, spec, x, &view)?;
    Ok(tape.value(h).clone())
}

/// Assigns each value to one of `n` quantile buckets; `None` entries are
/// skipped. Ties share a bucket, so constant values land in bucket 0.
/// Returns the per-node bucket and each bucket's `(lo, hi)` range.
pub fn bucket_by_quantile(values: &[Option<f64>], n: usize) -> (Vec<Option<usize>>, Vec<(f64, f64)>) {
    let mut sorted: Vec<f64> = values.iter().flatten().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    if m == 0 || n == 0 {
        return (vec![None; values.len()], Vec::new());
    }
    // Upper edge of bucket b is the value at rank ceil((b + 1) m / n) − 1.
    let uppers: Vec<f64> = (0..n - 1).map(|b| sorted[((b + 1) * m).div_ceil(n) - 1]).collect();
    let assign: Vec<Option<usize>> = values
        .iter()
        .map(|v| v.map(|v| uppers.iter().filter(|&&t| v > t).count()))
        .collect();
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
    for (v, b) in values.iter().zip(&assign) {
        if let (Some(v), Some(b)) = (v, b) {
            ranges[*b].0 = ranges[*b].0.min(*v);
            ranges[*b].1 = ranges[*b].1.max(*v);
        }
    }
    (assign, ranges)
}

fn bucket_rows(
    g: &Graph,
    emb_a: &Matrix,
    emb_b: &Matrix,
    buckets: &[Option<usize>],
    ranges: &[(f64, f64)],
    cfg: &MotivationConfig,
) -> Result<Vec<BucketRow>> {
    let labels = g.require_labels()?;
    let n_classes = g.n_classes().unwrap_or(0);
    let nb = ranges.len();
    let mut correct = vec![[0usize; 2]; nb];
    let mut total = vec![0usize; nb];
    for r in 0..cfg.probe.repeats as u64 {
        let split = make_splits(g, cfg.probe.fractions, cfg.seed.wrapping_add(r))?;
        let pa = LogisticProbe::fit(emb_a, labels, n_classes, &split.train, &cfg.probe)?.predict(emb_a, &split.test);
        let pb = LogisticProbe::fit(emb_b, labels, n_classes, &split.train, &cfg.probe)?.predict(emb_b, &split.test);
        for (t, &i) in split.test.iter().enumerate() {
            if let Some(b) = buckets[i] {
                total[b] += 1;
                correct[b][0] += usize::from(pa[t] == labels[i]);
                correct[b][1] += usize::from(pb[t] == labels[i]);
            }
        }
    }
    Ok((0..nb)
        .filter(|&b| total[b] > 0)
        .map(|b| BucketRow {
            bucket: b,
            lo: ranges[b].0,
            hi: ranges[b].1,
            n_test: total[b],
            acc_a: correct[b][0] as f64 / total[b] as f64,
            acc_b: correct[b][1] as f64 / total[b] as f64,
        })
        .collect())
}

/// Per-bucket probe accuracy of low- vs high-pass filters (by local
/// homophily) and shallow vs deep propagation (by clustering coefficient).
/// Isolated nodes are left out of the homophily buckets.
pub fn motivation_analysis(g: &Graph, cfg: &MotivationConfig) -> Result<MotivationReport> {
    let homophily: Vec<Option<f64>> = local_homophily(g)?
        .into_iter()
        .enumerate()
        .map(|(i, h)| (g.degree(i) > 0).then_some(h))
        .collect();
    let (hb, hr) = bucket_by_quantile(&homophily, cfg.n_buckets);
    let low = filter_embedding(g, &cfg.low_pass)?;
    let high = filter_embedding(g, &cfg.high_pass)?;
    let homophily = bucket_rows(g, &low, &high, &hb, &hr, cfg)?;
    if homophily.len() < 2 {
        log::warn!("local homophily is constant: every node falls in a single bucket");
    }

    let cc: Vec<Option<f64>> = clustering_coefficient(g).into_iter().map(Some).collect();
    let (cb, cr) = bucket_by_quantile(&cc, cfg.n_buckets);
    let shallow = filter_embedding(g, &cfg.shallow)?;
    let deep = filter_embedding(g, &cfg.deep)?;
    let clustering = bucket_rows(g, &shallow, &deep, &cb, &cr, cfg)?;
    Ok(MotivationReport {
        filter_a_homophily: cfg.low_pass.to_string(),
        filter_b_homophily: cfg.high_pass.to_string(),
        homophily,
        filter_a_clustering: cfg.shallow.to_string(),
        filter_b_clustering: cfg.deep.to_string(),
        clustering,
    })
}
