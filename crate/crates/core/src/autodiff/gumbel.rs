use ndarray::Array2;
use rand::Rng;

use crate::Matrix;

const U_MIN: f64 = 1e-12;
const U_MAX: f64 = 1.0 - 1e-12;

/// One standard Gumbel(0, 1) draw, `-ln(-ln U)` with `U` clamped away from
/// the endpoints.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().clamp(U_MIN, U_MAX);
    -(-u.ln()).ln()
}

/// Two independent Gumbel noise matrices of the given shape. In eval mode
/// both are zero and the generator is left untouched.
pub fn gumbel_pair<R: Rng + ?Sized>(
    rng: &mut R,
    shape: (usize, usize),
    train_mode: bool,
) -> (Matrix, Matrix) {
    if !train_mode {
        return (Array2::zeros(shape), Array2::zeros(shape));
    }
    let g1 = Array2::from_shape_simple_fn(shape, || gumbel(rng));
    let g2 = Array2::from_shape_simple_fn(shape, || gumbel(rng));
    (g1, g2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_under_seed() {
        let a = gumbel_pair(&mut ChaCha8Rng::seed_from_u64(3), (4, 2), true);
        let b = gumbel_pair(&mut ChaCha8Rng::seed_from_u64(3), (4, 2), true);
        assert_eq!(a, b);
        assert_ne!(a.0, a.1);
    }

    #[test]
    fn mean_is_euler_mascheroni() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mean = (0..n).map(|_| gumbel(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.577_215_664_9).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn eval_mode_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (g1, g2) = gumbel_pair(&mut rng, (3, 1), false);
        assert!(g1.iter().chain(g2.iter()).all(|&v| v == 0.0));
    }
}
