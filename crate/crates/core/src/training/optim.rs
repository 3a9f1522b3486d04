use crate::error::{Error, Result};
use crate::network::ParamSet;
use crate::tensor::{Scalar, Tensor};

/// SGD with heavy-ball momentum: `v <- mu*v + g`, `theta <- theta - lr*v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdMomentum<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocities: Vec<Tensor<T>>,
}

impl<T: Scalar> SgdMomentum<T> {
    /// Zero velocities mirroring `params`.
    pub fn new(params: &ParamSet<T>, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocities: params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
        }
    }

    pub fn velocities(&self) -> &[Tensor<T>] {
        &self.velocities
    }

    pub fn set_velocities(&mut self, velocities: Vec<Tensor<T>>) -> Result<()> {
        if velocities.len() != self.velocities.len() {
            return Err(Error::Malformed(format!(
                "expected {} velocity tensors, found {}",
                self.velocities.len(),
                velocities.len()
            )));
        }
        for (slot, v) in self.velocities.iter().zip(&velocities) {
            if slot.shape() != v.shape() {
                return Err(Error::Malformed(format!(
                    "velocity has shape {:?}, expected {:?}",
                    v.shape(),
                    slot.shape()
                )));
            }
        }
        self.velocities = velocities;
        Ok(())
    }

    /// One update. `grads[i]` pairs with the i-th parameter tensor.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != self.velocities.len() || params.len() != self.velocities.len() {
            return Err(Error::precondition(
                "sgd_step",
                format!(
                    "{} parameters, {} gradients, {} velocities",
                    params.len(),
                    grads.len(),
                    self.velocities.len()
                ),
            ));
        }
        let mu = T::from_f64_lossy(self.momentum);
        let lr = T::from_f64_lossy(self.learning_rate);
        for ((theta, v), g) in params.tensors_mut().iter_mut().zip(&mut self.velocities).zip(grads) {
            theta.expect_same_shape(g, "sgd_step")?;
            for ((t, v), &g) in theta.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = mu * *v + g;
                *t = *t - lr * *v;
            }
        }
        Ok(())
    }
}
