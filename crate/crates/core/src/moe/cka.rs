use std::fmt;
use std::str::FromStr;

use ndarray::Axis;

use crate::autodiff::{Tape, Var, EPS};
use crate::error::{Error, Result};
use crate::Matrix;

/// Which expert outputs the diversity penalty compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiversityTarget {
    #[default]
    Foundational,
    Residual,
    Both,
}

impl fmt::Display for DiversityTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiversityTarget::Foundational => "foundational",
            DiversityTarget::Residual => "residual",
            DiversityTarget::Both => "both",
        })
    }
}

impl FromStr for DiversityTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "foundational" => Ok(DiversityTarget::Foundational),
            "residual" => Ok(DiversityTarget::Residual),
            "both" => Ok(DiversityTarget::Both),
            other => Err(Error::Config(format!(
                "unknown diversity target {other:?} (expected foundational, residual or both)"
            ))),
        }
    }
}

fn centered_gram(e: &Matrix) -> Matrix {
    let k = e.dot(&e.t());
    let row = k.mean_axis(Axis(1)).expect("non-empty");
    let col = k.mean_axis(Axis(0)).expect("non-empty");
    let all = k.mean().expect("non-empty");
    let mut out = k;
    for ((i, j), v) in out.indexed_iter_mut() {
        *v += all - row[i] - col[j];
    }
    out
}

/// Linear-kernel CKA through explicit centred Gram matrices `HKH`.
pub fn cka_value(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape {
            op: "cka",
            left: a.dim(),
            right: b.dim(),
        });
    }
    if a.nrows() < 2 {
        return Err(Error::invalid("cka needs at least two rows"));
    }
    let (ka, kb) = (centered_gram(a), centered_gram(b));
    let hsic = |x: &Matrix, y: &Matrix| (x * y).sum();
    let (hab, haa, hbb) = (hsic(&ka, &kb), hsic(&ka, &ka), hsic(&kb, &kb));
    if haa < EPS || hbb < EPS {
        return Ok(0.0);
    }
    Ok(hab / (haa * hbb + EPS).sqrt())
}

struct Centered {
    c: Var,
    ct: Var,
    self_hsic: Var,
}

fn center(tape: &mut Tape, e: Var) -> Result<Centered> {
    let c = tape.center_cols(e)?;
    let ct = tape.transpose(c)?;
    let g = tape.matmul(ct, c)?;
    let self_hsic = tape.frob_inner(g, g)?;
    Ok(Centered { c, ct, self_hsic })
}

/// `tr(K_a^c K_b^c)` written as `‖Ãᵀ B̃‖²_F` over column-centred features,
/// which avoids forming the `n × n` Gram matrices.
fn cka_centered(tape: &mut Tape, a: &Centered, b: &Centered) -> Result<Var> {
    if tape.scalar(a.self_hsic) < EPS || tape.scalar(b.self_hsic) < EPS {
        return Ok(tape.scalar_constant(0.0));
    }
    let cross = tape.matmul(a.ct, b.c)?;
    let hab = tape.frob_inner(cross, cross)?;
    let prod = tape.mul(a.self_hsic, b.self_hsic)?;
    let prod = tape.shift(prod, EPS)?;
    let denom = tape.pow(prod, 0.5)?;
    tape.div(hab, denom)
}

/// Differentiable linear CKA between two `n × d` representations.
pub fn cka(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa.0 != sb.0 {
        return Err(Error::Shape {
            op: "cka",
            left: sa,
            right: sb,
        });
    }
    if sa.0 < 2 {
        return Err(Error::invalid("cka needs at least two rows"));
    }
    let ca = center(tape, a)?;
    let cb = center(tape, b)?;
    cka_centered(tape, &ca, &cb)
}

/// Mean CKA over all unordered pairs. Fewer than two outputs give 0.
pub fn diversity_loss(tape: &mut Tape, outputs: &[Var]) -> Result<Var> {
    if outputs.len() < 2 {
        log::warn!("diversity loss needs at least two outputs, got {}", outputs.len());
        return Ok(tape.scalar_constant(0.0));
    }
    let n = tape.shape(outputs[0]).0;
    if n < 2 {
        return Err(Error::invalid("cka needs at least two rows"));
    }
    let centered = outputs
        .iter()
        .map(|&o| center(tape, o))
        .collect::<Result<Vec<_>>>()?;
    let mut terms = Vec::new();
    for i in 0..centered.len() {
        for j in i + 1..centered.len() {
            terms.push(cka_centered(tape, &centered[i], &centered[j])?);
        }
    }
    let stacked = tape.vconcat(&terms)?;
    tape.mean(stacked)
}
