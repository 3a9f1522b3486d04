use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Padding, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Named, ordered parameter tensors of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor on `tape`, as leaves when `trainable`,
    /// otherwise as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// All scalars concatenated in parameter order.
    pub fn flatten(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.scalar_count() {
            return Err(Error::Shape {
                op: "load_flat",
                axis: "numel",
                expected: self.scalar_count(),
                found: flat.len(),
            });
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Replaces every tensor, checking names and shapes against the current set.
    pub fn replace_from(&mut self, named: &[(String, Tensor<T>)]) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(Error::Malformed(format!(
                "expected {} parameter tensors, found {}",
                self.tensors.len(),
                named.len()
            )));
        }
        for ((name, slot), (src_name, src)) in self.names.iter().zip(&mut self.tensors).zip(named) {
            if name != src_name {
                return Err(Error::Malformed(format!(
                    "parameter `{src_name}` where `{name}` was expected"
                )));
            }
            if slot.shape() != src.shape() {
                return Err(Error::Malformed(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    slot.shape()
                )));
            }
            *slot = src.clone();
        }
        Ok(())
    }
}

/// Uniform `[-√(2/fan_in), √(2/fan_in)]`.
pub(crate) fn he_uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
}

pub(crate) const KERNEL: usize = 3;
pub(crate) const BN_EPS: f64 = 1e-5;

/// A 3x3 convolution with optional batch normalisation and ReLU.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ConvLayer {
    pub weight: usize,
    pub bias: usize,
    pub norm: Option<(usize, usize)>,
    pub padding: Padding,
    pub activate: bool,
    pub cin: usize,
    pub cout: usize,
}

pub(crate) struct LayerBuilder<'a, T> {
    pub params: &'a mut ParamSet<T>,
    pub rng: &'a mut ChaCha8Rng,
    pub batch_norm: bool,
}

impl<T: Scalar> LayerBuilder<'_, T> {
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, activate: bool) -> ConvLayer {
        let weight = self.params.push(
            format!("{name}.weight"),
            he_uniform(self.rng, &[cout, cin, KERNEL, KERNEL], cin * KERNEL * KERNEL),
        );
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros([cout]));
        let norm = (self.batch_norm && activate).then(|| {
            (
                self.params.push(format!("{name}.bn_gamma"), Tensor::full([cout], T::one())),
                self.params.push(format!("{name}.bn_beta"), Tensor::zeros([cout])),
            )
        });
        ConvLayer {
            weight,
            bias,
            norm,
            padding: Padding::Same,
            activate,
            cin,
            cout,
        }
    }
}

impl ConvLayer {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let mut y = tape.conv2d(x, p[self.weight], p[self.bias], 1, self.padding)?;
        if let Some((g, b)) = self.norm {
            y = tape.batch_norm(y, p[g], p[b], T::from_f64_lossy(BN_EPS))?;
        }
        Ok(if self.activate { tape.relu(y) } else { y })
    }

    /// Scalars held by this layer.
    #[cfg(test)]
    pub fn scalar_count(&self) -> usize {
        let norm = if self.norm.is_some() { 2 * self.cout } else { 0 };
        self.cout * self.cin * KERNEL * KERNEL + self.cout + norm
    }
}
