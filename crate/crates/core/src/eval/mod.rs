//! Downstream evaluation and experiment reproductions.

mod cluster;
mod experiments;
mod fewshot;
mod motivation;
mod probe;
mod report;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub use self::cluster::{
    ari, clustering_accuracy, contingency, kmeans, kmeans_best, kmeans_eval, nmi, ClusterResult, KMeansFit,
};
pub use self::experiments::{
    naive_stability_arm, oracle_weight_run, oracle_weights, sensitivity_sweep, stability_bench, train_and_probe,
    train_embed, OracleMode, OracleNoise, OracleWeightSpec, SensitivityAxis, SweepRow, StabilityReport,
};
pub use self::fewshot::{
    fewshot_tasks, nearest, prototype_fewshot, prototypes, sample_task, FewShotResult, DEFAULT_TASKS,
};
pub use self::motivation::{
    bucket_by_quantile, filter_embedding, motivation_analysis, BucketRow, MotivationConfig, MotivationReport,
};
pub use self::probe::{
    argmax, linear_probe, majority_rate, LogisticProbe, probe_graph, probe_split, probe_splits, ProbeConfig, ProbeResult,
};
pub use self::report::{curves_csv, write_curves, write_report};

/// Median (mean of the middle pair for even lengths); NaN for no values.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Maps `f` over `items` on at most `jobs` threads, keeping input order.
pub fn par_map<T, U, F>(jobs: usize, items: Vec<T>, f: F) -> Result<Vec<U>>
where
    T: Send,
    U: Send,
    F: Fn(T) -> Result<U> + Sync + Send,
{
    if jobs <= 1 {
        return items.into_iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| items.into_par_iter().map(f).collect())
}

/// Element-wise medians of equally long per-seed vectors.
pub fn medians_by_position(per_seed: &[Vec<f64>]) -> Vec<f64> {
    let len = per_seed.first().map_or(0, Vec::len);
    (0..len)
        .map(|j| median(&per_seed.iter().map(|v| v[j]).collect::<Vec<_>>()))
        .collect()
}

/// True when every element is at most its predecessor.
pub fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

/// True when every element is at least its predecessor.
pub fn non_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] >= w[0])
}
