#![allow(dead_code)]

mod gradients;

#[allow(unused_imports)]
pub use gradients::{composite_gradient_errors, op_gradient_errors};

use adamore::autodiff::{ParamId, ParamStore, Tape, Var};
use adamore::graph::Graph;
use adamore::{Matrix, Result, SessionRng};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;

pub fn randn(rows: usize, cols: usize, rng: &mut SessionRng) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Uniform in `[lo, hi]` with a random sign.
pub fn away_from_zero(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut SessionRng) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| {
        let m = rng.random_range(lo..hi);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut SessionRng) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Erdős–Rényi graph with Gaussian features and no labels.
pub fn random_graph(n: usize, p: f64, f: usize, rng: &mut SessionRng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::new(edges, randn(n, f, rng), None).expect("valid graph")
}

/// Circulant `d`-regular graph (even `d`) under a random relabelling.
pub fn regular_graph(n: usize, d: usize, f: usize, rng: &mut SessionRng) -> Graph {
    assert!(d % 2 == 0 && d < n);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut edges = Vec::new();
    for i in 0..n {
        for s in 1..=d / 2 {
            edges.push((perm[i], perm[(i + s) % n]));
        }
    }
    Graph::new(edges, randn(n, f, rng), None).expect("valid graph")
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        0.0
    } else {
        diff / norm
    }
}

/// Builds `f` on fresh tapes and compares the reverse-mode gradient of every
/// input with central differences. Non-scalar outputs are reduced against a
/// fixed random projection. Returns the worst relative error over inputs.
pub fn check_op<F>(inputs: &[Matrix], f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut proj_rng = SessionRng::seed_from_u64(99);
    let mut projection: Option<Matrix> = None;
    let mut eval = |xs: &[Matrix], grads: bool| -> Result<(f64, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.variable(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let shape = tape.shape(out);
        let r = projection.get_or_insert_with(|| randn(shape.0, shape.1, &mut proj_rng)).clone();
        let r = tape.constant(r);
        let loss = tape.frob_inner(out, r)?;
        if !grads {
            return Ok((tape.scalar(loss), vec![]));
        }
        tape.backward(loss)?;
        let g = vars
            .iter()
            .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Array2::zeros(tape.shape(v))))
            .collect();
        Ok((tape.scalar(loss), g))
    };
    let (_, analytic) = eval(inputs, true)?;
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let mut numeric = Vec::with_capacity(x.len());
        for idx in 0..x.len() {
            let mut xs = inputs.to_vec();
            let v = xs[k].as_slice_mut().expect("standard layout");
            v[idx] += FD_STEP;
            let up = eval(&xs, false)?.0;
            let v = xs[k].as_slice_mut().expect("standard layout");
            v[idx] -= 2.0 * FD_STEP;
            let down = eval(&xs, false)?.0;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        let a: Vec<f64> = analytic[k].iter().copied().collect();
        worst = worst.max(relative_error(&a, &numeric));
    }
    Ok(worst)
}

/// Same comparison for parameters in a store, perturbing at most
/// `max_entries` randomly chosen entries per parameter.
pub fn check_store<F>(store: &mut ParamStore, ids: &[ParamId], max_entries: usize, f: F) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(Tape, Var)>,
{
    store.zero_grads();
    let (mut tape, loss) = f(store)?;
    tape.backward(loss)?;
    tape.accumulate_grads(store);
    let mut pick = SessionRng::seed_from_u64(7);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for &id in ids {
        let len = store.value(id).len();
        let mut entries: Vec<usize> = (0..len).collect();
        entries.shuffle(&mut pick);
        entries.truncate(max_entries);
        let grad = store.grad(id).clone();
        for &e in &entries {
            analytic.push(grad.as_slice().expect("standard layout")[e]);
            let orig = store.value(id).as_slice().expect("standard layout")[e];
            store.value_mut(id).as_slice_mut().expect("standard layout")[e] = orig + FD_STEP;
            let (t, l) = f(store)?;
            let up = t.scalar(l);
            store.value_mut(id).as_slice_mut().expect("standard layout")[e] = orig - FD_STEP;
            let (t, l) = f(store)?;
            let down = t.scalar(l);
            store.value_mut(id).as_slice_mut().expect("standard layout")[e] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}
