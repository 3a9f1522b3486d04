//! Reconstruction and adversarial losses on the tape.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Probabilities are clamped to at least this before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

fn floor<T: Scalar>() -> T {
    T::from_f64_lossy(LOG_FLOOR)
}

/// Per-example mean squared error, shape `[B]`.
pub fn l2_per_example<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean_per_example(sq)
}

/// Minibatch reconstruction loss: the mean of the per-example errors.
pub fn l2_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    if tape.value(pred).shape().first().copied().unwrap_or(0) == 0 {
        return Err(Error::precondition("l2_loss", "empty minibatch"));
    }
    let per = l2_per_example(tape, pred, target)?;
    tape.mean(per)
}

/// `mean(-ln D(real) - ln(1 - D(fake)))`.
pub fn d_loss<T: Scalar>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let lr = tape.log_clamped(d_real, floor());
    let neg_fake = tape.scale(d_fake, -T::one());
    let one_minus = tape.add_scalar(neg_fake, T::one());
    let lf = tape.log_clamped(one_minus, floor());
    let both = tape.add(lr, lf)?;
    let m = tape.mean(both)?;
    Ok(tape.scale(m, -T::one()))
}

/// `mean(-ln D(fake))`, the non-saturating generator term.
pub fn adversarial_loss<T: Scalar>(tape: &mut Tape<T>, d_fake: Var) -> Result<Var> {
    let lf = tape.log_clamped(d_fake, floor());
    let m = tape.mean(lf)?;
    Ok(tape.scale(m, -T::one()))
}

/// `l2 + w_adv * adversarial`; with no discriminator output this is `l2`.
pub fn g_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: Var,
    d_fake: Option<Var>,
    adversarial_weight: f64,
) -> Result<Var> {
    let l2 = l2_loss(tape, pred, target)?;
    match d_fake {
        Some(d) if adversarial_weight != 0.0 => {
            let adv = adversarial_loss(tape, d)?;
            let weighted = tape.scale(adv, T::from_f64_lossy(adversarial_weight));
            tape.add(l2, weighted)
        }
        _ => Ok(l2),
    }
}
