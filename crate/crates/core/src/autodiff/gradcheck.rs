//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Step used by every gradient check in this crate.
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Pass threshold on the maximum relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate with the largest error, `None` if nothing was checked.
    pub worst_index: Option<usize>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < tolerance
    }

    /// Combines reports over disjoint coordinate sets.
    pub fn merge(self, other: Self) -> Self {
        let checked = self.checked + other.checked;
        let mut worst = if other.max_rel_err > self.max_rel_err || self.worst_index.is_none() {
            other
        } else {
            self
        };
        worst.checked = checked;
        worst
    }
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares `analytic[i]` against `(f(θ + εe_i) - f(θ - εe_i)) / 2ε` for each
/// listed coordinate.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    analytic: &[f64],
    coords: &[usize],
    eps: f64,
) -> GradCheckReport {
    let mut probe = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
    };
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe);
        probe[i] = orig - eps;
        let minus = f(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        // NaN compares false, so route it through explicitly
        if report.worst_index.is_none() || err > report.max_rel_err || err.is_nan() {
            report.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
            report.worst_index = Some(i);
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report
}

/// Up to `count` distinct coordinates of `0..len`, sorted, drawn from `seed`.
pub fn sample_coordinates(len: usize, count: usize, seed: u64) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, len, count).into_vec();
    picked.sort_unstable();
    picked
}

/// Checks every coordinate of `theta` for a scalar function built on a tape.
/// `build` receives the tape and the leaf holding `theta` and returns the loss.
pub fn check_tape_fn(
    theta: &Tensor<f64>,
    eps: f64,
    build: impl Fn(&mut Tape<f64>, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let x = tape.leaf(theta.clone());
    let loss = build(&mut tape, x)?;
    tape.backward(loss)?;
    let analytic = tape.grad_or_zeros(x);

    let eval = |data: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let t = Tensor::new(theta.shape().to_vec(), data.to_vec()).expect("same shape");
        let x = tape.leaf(t);
        match build(&mut tape, x) {
            Ok(l) => tape.value(l).data()[0],
            Err(_) => f64::NAN,
        }
    };
    let coords: Vec<usize> = (0..theta.len()).collect();
    Ok(grad_check(eval, theta.data(), analytic.data(), &coords, eps))
}
