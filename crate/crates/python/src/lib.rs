//! Python bindings: graphs, training sessions and the evaluation protocols.
//!
//! Matrices cross the boundary as lists of row lists.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use adamore::eval::{fewshot_tasks, kmeans_eval, probe_graph, ProbeConfig};
use adamore::graph::{edge_homophily, gen_sbm, load_graph, save_graph, SbmConfig};
use adamore::trainer::{GraphContext, TrainConfig as CoreConfig, TrainState, ViewMode};
use adamore::{Error, Matrix};
use pyo3::exceptions::{PyKeyError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::NonFinite { .. } | Error::NotScalar(_) | Error::Diverged { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix_from_rows(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Matrix::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn parse_list<T: FromStr<Err = Error>>(items: &[String]) -> PyResult<Vec<T>> {
    items.iter().map(|s| s.parse().map_err(to_py)).collect()
}

fn show_list<T: ToString>(items: &[T]) -> Vec<String> {
    items.iter().map(ToString::to_string).collect()
}

/// Undirected graph with node features and optional labels.
#[pyclass(module = "adamore")]
pub struct Graph {
    inner: adamore::graph::Graph,
}

#[pymethods]
impl Graph {
    #[new]
    #[pyo3(signature = (edges, features, labels=None))]
    fn new(edges: Vec<(usize, usize)>, features: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> PyResult<Self> {
        let inner = adamore::graph::Graph::new(edges, matrix_from_rows(features)?, labels).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Reads `edges.tsv`, `features.tsv` and optional `labels.tsv` from a directory.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_graph(&dir).map_err(to_py)? })
    }

    /// Stochastic block model with Gaussian block-mean features.
    #[staticmethod]
    #[pyo3(signature = (blocks=2, per_block=100, p_in=0.5, p_out=0.05, feat_dim=16, feat_signal=2.0, seed=0))]
    fn sbm(
        blocks: usize,
        per_block: usize,
        p_in: f64,
        p_out: f64,
        feat_dim: usize,
        feat_signal: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = SbmConfig {
            n_per_block: per_block,
            k_blocks: blocks,
            p_in,
            p_out,
            feat_dim,
            feat_signal,
            seed,
        };
        Ok(Self { inner: gen_sbm(&cfg).map_err(to_py)? })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        save_graph(&dir, &self.inner).map_err(to_py)
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.n_edges()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.inner.features())
    }

    #[getter]
    fn labels(&self) -> Option<Vec<usize>> {
        self.inner.labels().map(<[usize]>::to_vec)
    }

    /// Fraction of edges joining same-label endpoints.
    fn edge_homophily(&self) -> PyResult<f64> {
        edge_homophily(&self.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(n_nodes={}, n_edges={}, n_features={})",
            self.inner.n_nodes(),
            self.inner.n_edges(),
            self.inner.n_features()
        )
    }
}

/// Training hyperparameters. Keyword arguments override the defaults.
#[pyclass(module = "adamore")]
pub struct TrainConfig {
    inner: CoreConfig,
}

impl TrainConfig {
    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let c = &mut self.inner;
        match key {
            "epochs" => c.epochs = value.extract()?,
            "lr" => c.lr = value.extract()?,
            "hidden" => c.hidden = value.extract()?,
            "mask_ratio" => c.mask_ratio = value.extract()?,
            "gamma" => c.gamma = value.extract()?,
            "gamma_svg" => c.gamma_svg = value.extract()?,
            "lambda_load" => c.lambda_load = value.extract()?,
            "lambda_div" => c.lambda_div = value.extract()?,
            "lambda_cls" => c.lambda_cls = value.extract()?,
            "tau" => c.tau = value.extract()?,
            "top_k" => c.top_k = value.extract()?,
            "n_exp" => c.set_n_exp(value.extract()?),
            "coh_bank" => c.coh_bank = parse_list(&value.extract::<Vec<String>>()?)?,
            "disp_bank" => c.disp_bank = parse_list(&value.extract::<Vec<String>>()?)?,
            "residual" => c.residual = parse_list(&value.extract::<Vec<String>>()?)?,
            "div_target" => c.div_target = value.extract::<String>()?.parse().map_err(to_py)?,
            "gate_hidden" => c.gate_hidden = value.extract()?,
            "struct_dim" => c.struct_dim = value.extract()?,
            "svg_steps" => c.svg_steps = value.extract()?,
            "view_mode" => c.view_mode = value.extract::<String>()?.parse().map_err(to_py)?,
            "fixed_weights" => c.view_mode = ViewMode::Fixed(Arc::new(value.extract()?)),
            "fusion" => c.fusion = value.extract::<String>()?.parse().map_err(to_py)?,
            "weight_stat" => c.weight_stat = value.extract::<String>()?.parse().map_err(to_py)?,
            "normalize_features" => c.normalize_features = value.extract()?,
            "finetune_epochs" => c.finetune_epochs = value.extract()?,
            "finetune_lr" => c.finetune_lr = value.extract()?,
            "seed" => c.seed = value.extract()?,
            other => return Err(PyKeyError::new_err(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }
}

#[pymethods]
impl TrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = Self { inner: CoreConfig::default() };
        if let Some(kw) = kwargs {
            // `n_exp` resets both banks, so it goes before explicit banks.
            if let Some(n) = kw.get_item("n_exp")? {
                cfg.set("n_exp", &n)?;
            }
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                if key != "n_exp" {
                    cfg.set(&key, &v)?;
                }
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    /// Current settings as a plain dict.
    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = &self.inner;
        let d = PyDict::new(py);
        d.set_item("epochs", c.epochs)?;
        d.set_item("lr", c.lr)?;
        d.set_item("hidden", c.hidden)?;
        d.set_item("mask_ratio", c.mask_ratio)?;
        d.set_item("gamma", c.gamma)?;
        d.set_item("gamma_svg", c.gamma_svg)?;
        d.set_item("lambda_load", c.lambda_load)?;
        d.set_item("lambda_div", c.lambda_div)?;
        d.set_item("lambda_cls", c.lambda_cls)?;
        d.set_item("tau", c.tau)?;
        d.set_item("top_k", c.top_k)?;
        d.set_item("coh_bank", show_list(&c.coh_bank))?;
        d.set_item("disp_bank", show_list(&c.disp_bank))?;
        d.set_item("residual", show_list(&c.residual))?;
        d.set_item("div_target", c.div_target.to_string())?;
        d.set_item("gate_hidden", c.gate_hidden)?;
        d.set_item("struct_dim", c.struct_dim)?;
        d.set_item("svg_steps", c.svg_steps)?;
        d.set_item("view_mode", c.view_mode.to_string())?;
        d.set_item("fusion", c.fusion.to_string())?;
        d.set_item("weight_stat", c.weight_stat.to_string())?;
        d.set_item("normalize_features", c.normalize_features)?;
        d.set_item("finetune_epochs", c.finetune_epochs)?;
        d.set_item("finetune_lr", c.finetune_lr)?;
        d.set_item("seed", c.seed)?;
        Ok(d)
    }

    fn __getattr__(&self, py: Python<'_>, name: &str) -> PyResult<Py<PyAny>> {
        match self.to_dict(py)?.get_item(name)? {
            Some(v) => Ok(v.unbind()),
            None => Err(pyo3::exceptions::PyAttributeError::new_err(name.to_string())),
        }
    }

    fn __setattr__(&mut self, name: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.set(name, value)
    }
}

/// A training session bound to one graph.
#[pyclass(module = "adamore", unsendable)]
pub struct Model {
    ctx: GraphContext,
    state: TrainState,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (graph, config=None))]
    fn new(graph: PyRef<'_, Graph>, config: Option<PyRef<'_, TrainConfig>>) -> PyResult<Self> {
        let cfg = config.map_or_else(CoreConfig::default, |c| c.inner.clone());
        let ctx = GraphContext::new(&graph.inner, &cfg).map_err(to_py)?;
        let state = TrainState::new(&ctx, cfg).map_err(to_py)?;
        Ok(Self { ctx, state })
    }

    /// Runs the remaining epochs and returns the loss history.
    fn fit<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        self.state.fit(&self.ctx).map_err(to_py)?;
        self.history(py)
    }

    /// One epoch; returns its loss components.
    fn train_epoch<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.state.train_epoch(&self.ctx).map_err(to_py)?;
        record(py, &r)
    }

    fn history<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let items = self
            .state
            .history
            .iter()
            .map(|r| record(py, r))
            .collect::<PyResult<Vec<_>>>()?;
        PyList::new(py, items)
    }

    #[getter]
    fn epochs_done(&self) -> usize {
        self.state.epochs_done()
    }

    /// Fused node embeddings.
    fn embed(&mut self) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_to_rows(&self.state.embed(&self.ctx).map_err(to_py)?))
    }

    /// Per-node fusion coefficient: 1 is fully cohesive, 0 fully dispersive.
    fn alpha(&mut self) -> PyResult<Vec<f64>> {
        Ok(self.state.embed_with_alpha(&self.ctx).map_err(to_py)?.1)
    }

    /// Deterministic cohesive-view weight of each edge, in `graph.edges` order.
    fn edge_weights(&mut self) -> PyResult<Vec<f64>> {
        self.state.eval_weights(&self.ctx).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.state.save_checkpoint(&path).map_err(to_py)
    }

    fn load(&mut self, path: PathBuf) -> PyResult<()> {
        self.state.load_checkpoint(&path).map_err(to_py)
    }
}

fn record<'py>(py: Python<'py>, r: &adamore::trainer::LossRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", r.epoch)?;
    d.set_item("l_mae", r.l_mae)?;
    d.set_item("l_load", r.l_load)?;
    d.set_item("l_div", r.l_div)?;
    d.set_item("l_svg", r.l_svg)?;
    d.set_item("total", r.total)?;
    Ok(d)
}

/// Logistic-regression probe over repeated random splits.
#[pyfunction]
#[pyo3(signature = (embeddings, graph, repeats=5, seed=0))]
fn probe<'py>(
    py: Python<'py>,
    embeddings: Vec<Vec<f64>>,
    graph: PyRef<'_, Graph>,
    repeats: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ProbeConfig {
        repeats,
        ..ProbeConfig::default()
    };
    let r = probe_graph(&matrix_from_rows(embeddings)?, &graph.inner, &cfg, seed).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mean", r.mean)?;
    d.set_item("std", r.std)?;
    d.set_item("median", r.median)?;
    d.set_item("accuracies", r.accuracies)?;
    Ok(d)
}

/// k-means with restarts, scored by matched accuracy, NMI and ARI.
#[pyfunction]
#[pyo3(signature = (embeddings, labels, k=None, restarts=10, seed=0))]
fn cluster<'py>(
    py: Python<'py>,
    embeddings: Vec<Vec<f64>>,
    labels: Vec<usize>,
    k: Option<usize>,
    restarts: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let k = k.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    let seeds: Vec<u64> = (seed..seed + restarts).collect();
    let r = kmeans_eval(&matrix_from_rows(embeddings)?, &labels, k, &seeds).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("acc", r.acc)?;
    d.set_item("nmi", r.nmi)?;
    d.set_item("ari", r.ari)?;
    Ok(d)
}

/// Nearest-prototype accuracy over sampled k-shot tasks.
#[pyfunction]
#[pyo3(signature = (embeddings, labels, shots=1, tasks=100, seed=0))]
fn fewshot<'py>(
    py: Python<'py>,
    embeddings: Vec<Vec<f64>>,
    labels: Vec<usize>,
    shots: usize,
    tasks: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = fewshot_tasks(&matrix_from_rows(embeddings)?, &labels, shots, tasks, seed).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("k_shot", r.k_shot)?;
    d.set_item("mean", r.mean)?;
    d.set_item("std", r.std)?;
    d.set_item("median", r.median)?;
    d.set_item("accuracies", r.accuracies)?;
    Ok(d)
}

#[pymodule(name = "adamore")]
fn python_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Graph>()?;
    m.add_class::<TrainConfig>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(probe, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(fewshot, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
