//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every operation appends one node holding its output value and the inputs
//! its backward rule needs. [`Tape::backward`] walks the nodes in exact
//! reverse order, so topological order holds by construction. Sparse
//! operands are constants; learned edge weights enter through
//! [`Tape::edge_spmm`], which scales each undirected edge by a dense weight
//! vector that does receive gradients.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::sparse::{Adjacency, Arcs, CsrMatrix};
use crate::Matrix;

/// Guard used by every normalisation.
pub const EPS: f64 = 1e-8;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    /// Position of the producing node on its tape.
    pub fn tape_id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<CsrMatrix>, Var),
    EdgeSpMM { adj: Arc<Adjacency>, w: Var, x: Var },
    ArcSpMM { arcs: Arc<Arcs>, att: Var, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    ScaleBy { s: Var, x: Var },
    MulCol { x: Var, c: Var },
    AddRow { x: Var, r: Var },
    Sum(Var),
    Mean(Var),
    RowMeans(Var),
    ColMeans(Var),
    RowSums(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    Pow(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    MaskedSoftmax(Var),
    HConcat(Vec<Var>),
    VConcat(Vec<Var>),
    Gather(Var, Arc<Vec<usize>>),
    ScatterAdd(Var, Arc<Vec<usize>>),
    SelectCol(Var, usize),
    ReplaceRows { x: Var, token: Var, rows: Arc<Vec<usize>> },
    RowNormalize(Var),
    RowCosine(Var, Var),
    Transpose(Var),
    Trace(Var),
    FrobInner(Var, Var),
    CenterCols(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::SpMM(..) => "spmm",
            Op::ArcSpMM { .. } => "arc_spmm",
            Op::EdgeSpMM { .. } => "edge_spmm",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::ScaleBy { .. } => "scale_by",
            Op::MulCol { .. } => "mul_col",
            Op::AddRow { .. } => "add_row",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowMeans(..) => "row_means",
            Op::ColMeans(..) => "col_means",
            Op::RowSums(..) => "row_sums",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Pow(..) => "pow",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::MaskedSoftmax(..) => "masked_softmax",
            Op::HConcat(..) => "hconcat",
            Op::VConcat(..) => "vconcat",
            Op::Gather(..) => "gather_rows",
            Op::ScatterAdd(..) => "scatter_add_rows",
            Op::SelectCol(..) => "select_col",
            Op::ReplaceRows { .. } => "replace_rows",
            Op::RowNormalize(..) => "row_normalize",
            Op::RowCosine(..) => "row_cosine",
            Op::Transpose(..) => "transpose",
            Op::Trace(..) => "trace",
            Op::FrobInner(..) => "frob_inner",
            Op::CenterCols(..) => "center_cols",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    grad: Option<Matrix>,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(Var, ParamId)>,
}

fn shape(m: &Matrix) -> (usize, usize) {
    (m.nrows(), m.ncols())
}

fn pow_signed(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < i32::MAX as f64 {
        x.powi(p as i32)
    } else {
        x.signum() * x.abs().powf(p)
    }
}

fn pow_signed_deriv(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < i32::MAX as f64 {
        p * x.powi(p as i32 - 1)
    } else {
        p * x.abs().powf(p - 1.0)
    }
}

fn softmax_rows(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

fn row_dot(a: &Matrix, b: &Matrix) -> Array2<f64> {
    let v = Zip::from(a.rows())
        .and(b.rows())
        .map_collect(|ra, rb| ra.dot(&rb));
    v.insert_axis(Axis(1))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Result<Var> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            other => self.inputs(other).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::RowCosine(a, b)
            | Op::FrobInner(a, b) => vec![*a, *b],
            Op::EdgeSpMM { w, x, .. } => vec![*w, *x],
            Op::ArcSpMM { att, x, .. } => vec![*att, *x],
            Op::ScaleBy { s, x } => vec![*s, *x],
            Op::MulCol { x, c } => vec![*x, *c],
            Op::AddRow { x, r } => vec![*x, *r],
            Op::ReplaceRows { x, token, .. } => vec![*x, *token],
            Op::HConcat(vs) | Op::VConcat(vs) => vs.clone(),
            Op::SpMM(_, x)
            | Op::Scale(x, _)
            | Op::Shift(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::RowMeans(x)
            | Op::ColMeans(x)
            | Op::RowSums(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Relu(x)
            | Op::LeakyRelu(x, _)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Pow(x, _)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::MaskedSoftmax(x)
            | Op::Gather(x, _)
            | Op::ScatterAdd(x, _)
            | Op::SelectCol(x, _)
            | Op::RowNormalize(x)
            | Op::Transpose(x)
            | Op::Trace(x)
            | Op::CenterCols(x) => vec![*x],
        }
    }

    fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), value), false)
    }

    /// Differentiable leaf not tied to a parameter store.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.leaf(value, true)
    }

    /// Records a parameter. Trainable bindings receive gradients that
    /// [`Tape::accumulate_grads`] later adds into the store; frozen bindings
    /// are plain constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId, trainable: bool) -> Var {
        let v = self.leaf(store.value(id).clone(), trainable);
        if trainable {
            self.bindings.push((v, id));
        }
        v
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(&self.nodes[v.0].value)
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::Shape {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// Constant sparse matrix times dense input.
    pub fn spmm(&mut self, m: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        if m.shape().1 != sx.0 {
            return Err(Error::Shape {
                op: "spmm",
                left: m.shape(),
                right: sx,
            });
        }
        let value = m.matmul_dense(self.value(x));
        self.push(value, Op::SpMM(Arc::clone(m), x))
    }

    /// `A_w · x` with per-edge weights `w` (shape `n_edges × 1`) on a fixed
    /// symmetric adjacency without self-loops.
    pub fn edge_spmm(&mut self, adj: &Arc<Adjacency>, w: Var, x: Var) -> Result<Var> {
        let (sw, sx) = (self.shape(w), self.shape(x));
        if sw != (adj.n_edges(), 1) {
            return Err(Error::Shape {
                op: "edge_spmm",
                left: (adj.n_edges(), 1),
                right: sw,
            });
        }
        if sx.0 != adj.n_nodes() {
            return Err(Error::Shape {
                op: "edge_spmm",
                left: (adj.n_nodes(), adj.n_nodes()),
                right: sx,
            });
        }
        let weights = self.value(w).column(0).to_vec();
        let value = adj.weighted_matmul(&weights, self.value(x));
        self.push(
            value,
            Op::EdgeSpMM {
                adj: Arc::clone(adj),
                w,
                x,
            },
        )
    }

    /// `out[dst[a]] += att[a] · x[src[a]]` over a list of directed arcs.
    /// Equivalent to gathering, scaling and scattering, without the
    /// `arcs × cols` intermediate.
    pub fn arc_spmm(&mut self, arcs: &Arc<Arcs>, att: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(att), self.shape(x));
        if sa != (arcs.len(), 1) {
            return Err(Error::Shape {
                op: "arc_spmm",
                left: (arcs.len(), 1),
                right: sa,
            });
        }
        if arcs.src.iter().any(|&j| j >= sx.0) {
            return Err(Error::Shape {
                op: "arc_spmm",
                left: (arcs.n_out, sx.0),
                right: sx,
            });
        }
        let (a, xv) = (self.value(att), self.value(x));
        let mut value = Array2::zeros((arcs.n_out, sx.1));
        for (k, (&i, &j)) in arcs.dst.iter().zip(arcs.src.iter()).enumerate() {
            value.row_mut(i).scaled_add(a[[k, 0]], &xv.row(j));
        }
        self.push(
            value,
            Op::ArcSpMM {
                arcs: Arc::clone(arcs),
                att,
                x,
            },
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).t().to_owned();
        self.push(value, Op::Transpose(x))
    }

    pub fn trace(&mut self, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        if sx.0 != sx.1 {
            return Err(Error::Shape {
                op: "trace",
                left: sx,
                right: (sx.1, sx.0),
            });
        }
        let t = self.value(x).diag().sum();
        self.push(Array2::from_elem((1, 1), t), Op::Trace(x))
    }

    /// `Σ a ⊙ b` as a 1×1 node.
    pub fn frob_inner(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("frob_inner", a, b)?;
        let v = Zip::from(self.value(a))
            .and(self.value(b))
            .fold(0.0, |acc, &p, &q| acc + p * q);
        self.push(Array2::from_elem((1, 1), v), Op::FrobInner(a, b))
    }

    /// Subtracts each column's mean.
    pub fn center_cols(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let mean = v.mean_axis(Axis(0)).expect("non-empty");
        let value = v - &mean.insert_axis(Axis(0));
        self.push(value, Op::CenterCols(x))
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("div", a, b)?;
        let value = self.value(a) / self.value(b);
        self.push(value, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x) * c;
        self.push(value, Op::Scale(x, c))
    }

    /// `x + c` elementwise.
    pub fn shift(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x) + c;
        self.push(value, Op::Shift(x))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let neg = self.scale(x, -1.0)?;
        self.shift(neg, 1.0)
    }

    /// Multiplies `x` by the 1×1 node `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::Shape {
                op: "scale_by",
                left: self.shape(s),
                right: (1, 1),
            });
        }
        let value = self.value(x) * self.scalar(s);
        self.push(value, Op::ScaleBy { s, x })
    }

    /// Broadcasts the column vector `c` (n×1) across the columns of `x`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (sx, sc) = (self.shape(x), self.shape(c));
        if sc != (sx.0, 1) {
            return Err(Error::Shape {
                op: "mul_col",
                left: sx,
                right: sc,
            });
        }
        let value = self.value(x) * self.value(c);
        self.push(value, Op::MulCol { x, c })
    }

    /// Adds the row vector `r` (1×c) to every row of `x`.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (sx, sr) = (self.shape(x), self.shape(r));
        if sr != (1, sx.1) {
            return Err(Error::Shape {
                op: "add_row",
                left: sx,
                right: sr,
            });
        }
        let value = self.value(x) + self.value(r);
        self.push(value, Op::AddRow { x, r })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(value, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).mapv(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).mapv(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let value = self.value(x).mapv(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(x, slope))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).mapv(f64::exp);
        self.push(value, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).mapv(f64::ln);
        self.push(value, Op::Log(x))
    }

    /// Elementwise power. Integer exponents use the ordinary power; other
    /// exponents keep the sign of the base (`sign(x)·|x|^p`).
    pub fn pow(&mut self, x: Var, p: f64) -> Result<Var> {
        let value = self.value(x).mapv(|v| pow_signed(v, p));
        self.push(value, Op::Pow(x, p))
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.sum() / v.len() as f64;
        self.push(Array2::from_elem((1, 1), m), Op::Mean(x))
    }

    /// Mean of each row, as an n×1 column.
    pub fn row_means(&mut self, x: Var) -> Result<Var> {
        let value = self
            .value(x)
            .mean_axis(Axis(1))
            .expect("non-empty")
            .insert_axis(Axis(1));
        self.push(value, Op::RowMeans(x))
    }

    /// Mean of each column, as a 1×c row.
    pub fn col_means(&mut self, x: Var) -> Result<Var> {
        let value = self
            .value(x)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        self.push(value, Op::ColMeans(x))
    }

    pub fn row_sums(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::RowSums(x))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = softmax_rows(self.value(x));
        self.push(value, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let mut value = self.value(x).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.fold(0.0, |a, &b| a + (b - max).exp()).ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.push(value, Op::LogSoftmax(x))
    }

    /// Row-wise softmax over the entries where `mask` is set; other entries
    /// are exactly zero. Every row needs at least one selected entry.
    pub fn masked_softmax(&mut self, x: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        let sx = self.shape(x);
        if mask.len() != sx.0 * sx.1 {
            return Err(Error::Shape {
                op: "masked_softmax",
                left: sx,
                right: (mask.len(), 1),
            });
        }
        let mut value = self.value(x).clone();
        for (i, mut row) in value.rows_mut().into_iter().enumerate() {
            let sel = &mask[i * sx.1..(i + 1) * sx.1];
            let max = row
                .iter()
                .zip(sel)
                .filter(|(_, &m)| m)
                .fold(f64::NEG_INFINITY, |a, (&b, _)| a.max(b));
            let mut sum = 0.0;
            for (v, &m) in row.iter_mut().zip(sel) {
                *v = if m { (*v - max).exp() } else { 0.0 };
                sum += *v;
            }
            row.mapv_inplace(|v| v / sum);
        }
        self.push(value, Op::MaskedSoftmax(x))
    }

    // ---- structural -----------------------------------------------------

    /// Horizontal concatenation.
    pub fn hconcat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Error::Shape {
                    op: "hconcat",
                    left: self.shape(parts[0]),
                    right: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("checked shapes");
        self.push(value, Op::HConcat(parts.to_vec()))
    }

    /// Vertical concatenation.
    pub fn vconcat(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0]).1;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(Error::Shape {
                    op: "vconcat",
                    left: self.shape(parts[0]),
                    right: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("checked shapes");
        self.push(value, Op::VConcat(parts.to_vec()))
    }

    /// Rows of `x` at `idx` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let sx = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= sx.0) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: sx,
                right: (bad, sx.1),
            });
        }
        let value = self.value(x).select(Axis(0), &idx);
        self.push(value, Op::Gather(x, idx))
    }

    /// Row selection by an index set.
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        self.gather_rows(x, Arc::new(idx.to_vec()))
    }

    /// Output row `idx[r]` accumulates input row `r`; the output has
    /// `n_out` rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Arc<Vec<usize>>, n_out: usize) -> Result<Var> {
        let sx = self.shape(x);
        if idx.len() != sx.0 || idx.iter().any(|&i| i >= n_out) {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                left: sx,
                right: (idx.len(), n_out),
            });
        }
        let src = self.value(x);
        let mut value = Array2::zeros((n_out, sx.1));
        for (r, &t) in idx.iter().enumerate() {
            value.row_mut(t).scaled_add(1.0, &src.row(r));
        }
        self.push(value, Op::ScatterAdd(x, idx))
    }

    pub fn select_col(&mut self, x: Var, col: usize) -> Result<Var> {
        let sx = self.shape(x);
        if col >= sx.1 {
            return Err(Error::Shape {
                op: "select_col",
                left: sx,
                right: (sx.0, col),
            });
        }
        let value = self.value(x).slice(s![.., col..col + 1]).to_owned();
        self.push(value, Op::SelectCol(x, col))
    }

    /// Copy of `x` whose rows in `rows` are replaced by the 1×c `token`.
    /// The replaced rows of `x` never reach the output.
    pub fn replace_rows(&mut self, x: Var, token: Var, rows: Arc<Vec<usize>>) -> Result<Var> {
        let (sx, st) = (self.shape(x), self.shape(token));
        if st != (1, sx.1) || rows.iter().any(|&r| r >= sx.0) {
            return Err(Error::Shape {
                op: "replace_rows",
                left: sx,
                right: st,
            });
        }
        let mut value = self.value(x).clone();
        let t = self.value(token).row(0).to_owned();
        for &r in rows.iter() {
            value.row_mut(r).assign(&t);
        }
        self.push(value, Op::ReplaceRows { x, token, rows })
    }

    /// Each row divided by `max(‖row‖, EPS)`.
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let mut value = self.value(x).clone();
        for mut row in value.rows_mut() {
            let n = row.dot(&row).sqrt().max(EPS);
            row.mapv_inplace(|v| v / n);
        }
        self.push(value, Op::RowNormalize(x))
    }

    /// Row-wise cosine similarity (n×1); rows with zero norm give 0.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("row_cosine", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let dots = row_dot(va, vb);
        let na = row_dot(va, va).mapv(|v| v.sqrt().max(EPS));
        let nb = row_dot(vb, vb).mapv(|v| v.sqrt().max(EPS));
        let value = dots / (na * nb);
        self.push(value, Op::RowCosine(a, b))
    }

    // ---- backward -------------------------------------------------------

    /// Accumulates `d loss / d v` into every differentiable ancestor of the
    /// 1×1 `loss`. Nodes that are not ancestors keep no gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::NotScalar(self.shape(loss)));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let contributions = self.backward_rule(i, &g);
            for (input, gi) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => *acc += &gi,
                    slot @ None => *slot = Some(gi),
                }
            }
            match &mut self.nodes[i].grad {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Adds the gradients of every trainable binding into `store`.
    pub fn accumulate_grads(&self, store: &mut ParamStore) {
        for &(v, id) in &self.bindings {
            if let Some(g) = &self.nodes[v.0].grad {
                *store.grad_mut(id) += g;
            }
        }
    }

    fn backward_rule(&self, i: usize, g: &Matrix) -> Vec<(Var, Matrix)> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => vec![
                (*a, g.dot(&val(*b).t())),
                (*b, val(*a).t().dot(g)),
            ],
            Op::SpMM(m, x) => vec![(*x, m.t_matmul_dense(g))],
            Op::ArcSpMM { arcs, att, x } => {
                let (a, xv) = (val(*att), val(*x));
                let mut gx = Array2::zeros(xv.raw_dim());
                let mut ga = Array2::zeros(a.raw_dim());
                for (k, (&i, &j)) in arcs.dst.iter().zip(arcs.src.iter()).enumerate() {
                    gx.row_mut(j).scaled_add(a[[k, 0]], &g.row(i));
                    ga[[k, 0]] = g.row(i).dot(&xv.row(j));
                }
                vec![(*att, ga), (*x, gx)]
            }
            Op::EdgeSpMM { adj, w, x } => {
                let weights = val(*w).column(0).to_vec();
                let gx = adj.weighted_matmul(&weights, g);
                let gw = adj.edge_weight_grad(g, val(*x));
                let gw = Array2::from_shape_vec((gw.len(), 1), gw).expect("column");
                vec![(*w, gw), (*x, gx)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, -g)],
            Op::Mul(a, b) => vec![(*a, g * val(*b)), (*b, g * val(*a))],
            Op::Div(a, b) => {
                let vb = val(*b);
                let ga = g / vb;
                let gb = -(g * val(*a)) / (vb * vb);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, c) => vec![(*x, g * *c)],
            Op::Shift(x) => vec![(*x, g.clone())],
            Op::ScaleBy { s, x } => {
                let gs = Zip::from(g).and(val(*x)).fold(0.0, |acc, &p, &q| acc + p * q);
                let gx = g * val(*s)[[0, 0]];
                vec![(*s, Array2::from_elem((1, 1), gs)), (*x, gx)]
            }
            Op::MulCol { x, c } => {
                let gx = g * val(*c);
                let gc = (g * val(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![(*x, gx), (*c, gc)]
            }
            Op::AddRow { x, r } => {
                let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![(*x, g.clone()), (*r, gr)]
            }
            Op::Sum(x) => vec![(*x, Array2::from_elem(val(*x).raw_dim(), g[[0, 0]]))],
            Op::Mean(x) => {
                let n = val(*x).len() as f64;
                vec![(*x, Array2::from_elem(val(*x).raw_dim(), g[[0, 0]] / n))]
            }
            Op::RowMeans(x) => {
                let cols = val(*x).ncols() as f64;
                let gx = g.broadcast(val(*x).raw_dim()).expect("column broadcast").mapv(|v| v / cols);
                vec![(*x, gx)]
            }
            Op::ColMeans(x) => {
                let rows = val(*x).nrows() as f64;
                let gx = g.broadcast(val(*x).raw_dim()).expect("row broadcast").mapv(|v| v / rows);
                vec![(*x, gx)]
            }
            Op::RowSums(x) => {
                let gx = g.broadcast(val(*x).raw_dim()).expect("column broadcast").to_owned();
                vec![(*x, gx)]
            }
            Op::Sigmoid(x) => vec![(*x, g * &y.mapv(|s| s * (1.0 - s)))],
            Op::Tanh(x) => vec![(*x, g * &y.mapv(|t| 1.0 - t * t))],
            Op::Relu(x) => {
                let mut gx = g.clone();
                Zip::from(&mut gx).and(val(*x)).for_each(|d, &v| {
                    if v <= 0.0 {
                        *d = 0.0
                    }
                });
                vec![(*x, gx)]
            }
            Op::LeakyRelu(x, slope) => {
                let mut gx = g.clone();
                Zip::from(&mut gx).and(val(*x)).for_each(|d, &v| {
                    if v <= 0.0 {
                        *d *= slope
                    }
                });
                vec![(*x, gx)]
            }
            Op::Exp(x) => vec![(*x, g * y)],
            Op::Log(x) => vec![(*x, g / val(*x))],
            Op::Pow(x, p) => vec![(*x, g * &val(*x).mapv(|v| pow_signed_deriv(v, *p)))],
            Op::Softmax(x) => {
                let inner = row_dot(g, y);
                vec![(*x, y * &(g - &inner))]
            }
            Op::LogSoftmax(x) => {
                let sm = y.mapv(f64::exp);
                let gsum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![(*x, g - &(sm * &gsum))]
            }
            Op::MaskedSoftmax(x) => {
                // Unselected entries have y = 0, which zeroes their gradient.
                let inner = row_dot(g, y);
                vec![(*x, y * &(g - &inner))]
            }
            Op::HConcat(parts) => {
                let mut out = Vec::with_capacity(parts.len());
                let mut start = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    out.push((p, g.slice(s![.., start..start + w]).to_owned()));
                    start += w;
                }
                out
            }
            Op::VConcat(parts) => {
                let mut out = Vec::with_capacity(parts.len());
                let mut start = 0;
                for &p in parts {
                    let h = val(p).nrows();
                    out.push((p, g.slice(s![start..start + h, ..]).to_owned()));
                    start += h;
                }
                out
            }
            Op::Gather(x, idx) => {
                let mut gx = Array2::zeros(val(*x).raw_dim());
                for (r, &src) in idx.iter().enumerate() {
                    gx.row_mut(src).scaled_add(1.0, &g.row(r));
                }
                vec![(*x, gx)]
            }
            Op::ScatterAdd(x, idx) => vec![(*x, g.select(Axis(0), idx))],
            Op::SelectCol(x, col) => {
                let mut gx = Array2::zeros(val(*x).raw_dim());
                gx.slice_mut(s![.., *col..*col + 1]).assign(g);
                vec![(*x, gx)]
            }
            Op::ReplaceRows { x, token, rows } => {
                let mut gx = g.clone();
                let mut gt = Array2::zeros((1, g.ncols()));
                for &r in rows.iter() {
                    gt.row_mut(0).scaled_add(1.0, &g.row(r));
                    gx.row_mut(r).fill(0.0);
                }
                vec![(*x, gx), (*token, gt)]
            }
            Op::RowNormalize(x) => {
                let vx = val(*x);
                let mut gx = g.clone();
                for ((mut gr, xr), yr) in gx.rows_mut().into_iter().zip(vx.rows()).zip(y.rows()) {
                    let norm = xr.dot(&xr).sqrt();
                    if norm > EPS {
                        let proj = yr.dot(&gr);
                        Zip::from(&mut gr).and(&yr).for_each(|d, &yy| *d = (*d - yy * proj) / norm);
                    } else {
                        gr.mapv_inplace(|d| d / EPS);
                    }
                }
                vec![(*x, gx)]
            }
            Op::RowCosine(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let mut ga = Array2::zeros(va.raw_dim());
                let mut gb = Array2::zeros(vb.raw_dim());
                for r in 0..va.nrows() {
                    let (ar, br) = (va.row(r), vb.row(r));
                    let (sa, sb) = (ar.dot(&ar).sqrt(), br.dot(&br).sqrt());
                    let (na, nb) = (sa.max(EPS), sb.max(EPS));
                    let c = y[[r, 0]];
                    let gr = g[[r, 0]];
                    // d c / d a = b / (na nb) - c a / |a|^2 while |a| > EPS.
                    let ka = if sa > EPS { c / (sa * sa) } else { 0.0 };
                    let kb = if sb > EPS { c / (sb * sb) } else { 0.0 };
                    let inv = 1.0 / (na * nb);
                    let mut gar = ga.row_mut(r);
                    Zip::from(&mut gar)
                        .and(&ar)
                        .and(&br)
                        .for_each(|d, &x, &z| *d = gr * (z * inv - ka * x));
                    let mut gbr = gb.row_mut(r);
                    Zip::from(&mut gbr)
                        .and(&ar)
                        .and(&br)
                        .for_each(|d, &x, &z| *d = gr * (x * inv - kb * z));
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Transpose(x) => vec![(*x, g.t().to_owned())],
            Op::Trace(x) => {
                let n = val(*x).nrows();
                vec![(*x, Array2::eye(n) * g[[0, 0]])]
            }
            Op::FrobInner(a, b) => {
                let s = g[[0, 0]];
                vec![(*a, val(*b) * s), (*b, val(*a) * s)]
            }
            Op::CenterCols(x) => {
                let mean = g.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
                vec![(*x, g - &mean)]
            }
        }
    }
}
