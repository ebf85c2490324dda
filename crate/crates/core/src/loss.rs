//! Loss terms shared by the trainer, the view generator and the probes.

use ndarray::Array2;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// `mean_i (1 − cos(pred_i, target_i)^γ)`. Zero-norm rows count as cos 0.
pub fn scaled_cosine_error(tape: &mut Tape, pred: Var, target: Var, gamma: f64) -> Result<Var> {
    let cos = tape.row_cosine(pred, target)?;
    let p = tape.pow(cos, gamma)?;
    let err = tape.one_minus(p)?;
    tape.mean(err)
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of
/// `logits`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = tape.shape(logits);
    if labels.len() != n {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: (n, c),
            right: (labels.len(), 1),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    let mut onehot = Array2::zeros((n, c));
    for (i, &y) in labels.iter().enumerate() {
        onehot[[i, y]] = -1.0 / n as f64;
    }
    let logp = tape.log_softmax(logits)?;
    let w = tape.constant(onehot);
    tape.frob_inner(logp, w)
}
