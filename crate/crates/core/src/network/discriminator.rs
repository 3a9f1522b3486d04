use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{he_uniform, ConvLayer, LayerBuilder, ParamSet};
use super::{check_spatial, DEPTH};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub base_width: usize,
    /// Square input side; fixes the dense layer's fan-in.
    pub image_size: usize,
    pub batch_norm: bool,
}

impl DiscriminatorSpec {
    /// `L` plus one chrominance plane.
    pub const INPUT_CHANNELS: usize = 2;

    pub fn new(base_width: usize, image_size: usize) -> Self {
        Self {
            base_width,
            image_size,
            batch_norm: false,
        }
    }

    pub fn dense_inputs(&self) -> usize {
        let side = self.image_size >> DEPTH;
        (self.base_width << (DEPTH - 1)) * side * side
    }
}

/// Four conv-pool blocks, one more conv, flatten, dense and sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    spec: DiscriminatorSpec,
    params: ParamSet<T>,
    blocks: Vec<ConvLayer>,
    last_conv: ConvLayer,
    dense_w: usize,
    dense_b: usize,
}

impl<T: Scalar> Discriminator<T> {
    pub fn build(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        if spec.base_width == 0 {
            return Err(Error::config("base_width", "must be at least 1"));
        }
        crate::dataset::validate_image_size(spec.image_size, "image_size")?;
        let mut params = ParamSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lb = LayerBuilder {
            params: &mut params,
            rng: &mut rng,
            batch_norm: spec.batch_norm,
        };
        let mut blocks = Vec::with_capacity(DEPTH);
        let mut cin = DiscriminatorSpec::INPUT_CHANNELS;
        for i in 0..DEPTH {
            let w = spec.base_width << i;
            blocks.push(lb.conv(&format!("block{i}.conv"), cin, w, true));
            cin = w;
        }
        let last_conv = lb.conv("final.conv", cin, cin, true);
        let n = spec.dense_inputs();
        let dense_w = params.push("dense.weight", he_uniform(&mut rng, &[n, 1], n));
        let dense_b = params.push("dense.bias", Tensor::zeros([1]));
        Ok(Self {
            spec,
            params,
            blocks,
            last_conv,
            dense_w,
            dense_b,
        })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        Discriminator {
            spec: self.spec,
            params: self.params.cast(),
            blocks: self.blocks.clone(),
            last_conv: self.last_conv.clone(),
            dense_w: self.dense_w,
            dense_b: self.dense_b,
        }
    }

    /// `D(chroma | L)`: probability per batch element, shape `[B, 1]`.
    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], l: Var, chroma: Var) -> Result<Var> {
        const OP: &str = "discriminator_forward";
        let (_, c, h, w) = check_spatial(tape.value(l), OP)?;
        if c != 1 {
            return Err(Error::Shape {
                op: OP,
                axis: "channel",
                expected: 1,
                found: c,
            });
        }
        tape.value(l).expect_same_shape(tape.value(chroma), OP)?;
        for (axis, found) in [("height", h), ("width", w)] {
            if found != self.spec.image_size {
                return Err(Error::Shape {
                    op: OP,
                    axis,
                    expected: self.spec.image_size,
                    found,
                });
            }
        }
        let mut x = tape.concat_channels(l, chroma)?;
        for layer in &self.blocks {
            x = layer.apply(tape, p, x)?;
            x = tape.maxpool2(x)?;
        }
        x = self.last_conv.apply(tape, p, x)?;
        let flat = tape.flatten(x)?;
        let logit = tape.dense(flat, p[self.dense_w], p[self.dense_b])?;
        Ok(tape.sigmoid(logit))
    }

    pub fn predict(&self, l: &Tensor<T>, chroma: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let lv = tape.constant(l.clone());
        let cv = tape.constant(chroma.clone());
        let out = self.forward(&mut tape, &p, lv, cv)?;
        Ok(tape.value(out).clone())
    }
}
