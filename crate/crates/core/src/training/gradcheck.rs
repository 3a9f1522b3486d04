//! Finite-difference check of the full generator and discriminator losses in
//! 64-bit precision.

use super::config::{Mode, TrainConfig};
use super::loss::{d_loss, g_loss};
use crate::autodiff::gradcheck::{grad_check, sample_coordinates, GradCheckReport, DEFAULT_EPSILON};
use crate::autodiff::Tape;
use crate::dataset::uniform_noise;
use crate::error::Result;
use crate::network::{Discriminator, Generator};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGradCheck {
    pub image_size: usize,
    pub base_width: usize,
    pub seed: u64,
    pub mode: Mode,
    pub batch_norm: bool,
    pub batch: usize,
    /// Coordinates sampled per loss.
    pub coords: usize,
    pub adversarial_weight: f64,
    pub epsilon: f64,
    /// Multiplies the analytic gradient; anything but 1 should fail the check.
    pub gradient_scale: f64,
}

impl Default for NetworkGradCheck {
    fn default() -> Self {
        Self {
            image_size: 16,
            base_width: 4,
            seed: 0,
            mode: Mode::Makeup,
            batch_norm: false,
            batch: 2,
            coords: 200,
            adversarial_weight: 0.5,
            epsilon: DEFAULT_EPSILON,
            gradient_scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Objective {
    Generator,
    Discriminator,
}

struct Fixture {
    g: Generator<f64>,
    d: Discriminator<f64>,
    l: Tensor<f64>,
    z: Tensor<f64>,
    target: Tensor<f64>,
    w_adv: f64,
}

impl Fixture {
    fn eval(&self, g: &Generator<f64>, d: &Discriminator<f64>, objective: Objective, want_grads: bool) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let gp = g.params().bind(&mut tape, true);
        let dp = d.params().bind(&mut tape, true);
        let l = tape.constant(self.l.clone());
        let z = tape.constant(self.z.clone());
        let target = tape.constant(self.target.clone());
        let fake = g.forward(&mut tape, &gp, l, z, None)?;
        let d_fake = d.forward(&mut tape, &dp, l, fake)?;
        let loss = match objective {
            Objective::Generator => g_loss(&mut tape, fake, target, Some(d_fake), self.w_adv)?,
            Objective::Discriminator => {
                let d_real = d.forward(&mut tape, &dp, l, target)?;
                d_loss(&mut tape, d_real, d_fake)?
            }
        };
        let value = tape.value(loss).data()[0];
        if !want_grads {
            return Ok((value, Vec::new()));
        }
        tape.backward(loss)?;
        let grads = gp.iter().chain(&dp).flat_map(|&v| tape.grad_or_zeros(v).into_data()).collect();
        Ok((value, grads))
    }
}

impl NetworkGradCheck {
    pub fn run(&self) -> Result<GradCheckReport> {
        let cfg = TrainConfig {
            image_size: self.image_size,
            base_width: self.base_width,
            mode: self.mode,
            batch_norm: self.batch_norm,
            seed: self.seed,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        let shape = [self.batch.max(1), 1, self.image_size, self.image_size];
        let fx = Fixture {
            g: Generator::build(cfg.generator_spec(), self.seed)?,
            d: Discriminator::build(cfg.discriminator_spec(), self.seed.wrapping_add(1))?,
            l: uniform_noise(self.seed.wrapping_add(2), shape).map(|v| 0.5 * (v + 1.0)).cast(),
            z: uniform_noise(self.seed.wrapping_add(3), shape).cast(),
            target: uniform_noise(self.seed.wrapping_add(4), shape).map(|v| 0.4 * v).cast(),
            w_adv: self.adversarial_weight,
        };
        let n_gen = fx.g.params().scalar_count();
        let theta: Vec<f64> = fx.g.params().flatten().into_iter().chain(fx.d.params().flatten()).collect();

        let mut report: Option<GradCheckReport> = None;
        for (k, objective) in [Objective::Generator, Objective::Discriminator].into_iter().enumerate() {
            let (_, mut analytic) = fx.eval(&fx.g, &fx.d, objective, true)?;
            for a in &mut analytic {
                *a *= self.gradient_scale;
            }
            let f = |flat: &[f64]| {
                let (mut g, mut d) = (fx.g.clone(), fx.d.clone());
                g.params_mut().load_flat(&flat[..n_gen]).expect("same layout");
                d.params_mut().load_flat(&flat[n_gen..]).expect("same layout");
                fx.eval(&g, &d, objective, false).map_or(f64::NAN, |(v, _)| v)
            };
            let coords = sample_coordinates(theta.len(), self.coords, self.seed.wrapping_add(10 + k as u64));
            let r = grad_check(f, &theta, &analytic, &coords, self.epsilon);
            report = Some(match report {
                Some(prev) => prev.merge(r),
                None => r,
            });
        }
        Ok(report.expect("two objectives"))
    }
}
