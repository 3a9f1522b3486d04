use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{ConvLayer, LayerBuilder, ParamSet};
use super::{check_spatial, DEPTH};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Where image-level context enters the generator bottleneck.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GlobalFeatures {
    /// Makeup mode: the generator sees only `L` and `z`.
    None,
    /// A small trainable CNN on `L` yields a `dim`-vector per image.
    Extractor { dim: usize },
    /// Callers supply a `[B, dim]` vector at forward time.
    External { dim: usize },
}

impl GlobalFeatures {
    pub fn dim(&self) -> usize {
        match *self {
            GlobalFeatures::None => 0,
            GlobalFeatures::Extractor { dim } | GlobalFeatures::External { dim } => dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Channels of the first encoder block; doubled per block.
    pub base_width: usize,
    pub batch_norm: bool,
    pub global_features: GlobalFeatures,
}

impl GeneratorSpec {
    /// `L` plus the noise plane.
    pub const INPUT_CHANNELS: usize = 2;
    pub const OUTPUT_CHANNELS: usize = 1;

    pub fn new(base_width: usize) -> Self {
        Self {
            base_width,
            batch_norm: false,
            global_features: GlobalFeatures::None,
        }
    }

    pub fn widths(&self) -> [usize; DEPTH] {
        std::array::from_fn(|i| self.base_width << i)
    }
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self::new(32)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Extractor {
    convs: [ConvLayer; 3],
}

/// Encoder of four conv-conv-pool blocks, decoder of four
/// conv-conv-upsample-merge blocks, and a three-conv head with a linear
/// single-channel output.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    spec: GeneratorSpec,
    params: ParamSet<T>,
    encoder: Vec<[ConvLayer; 2]>,
    decoder: Vec<[ConvLayer; 2]>,
    head: [ConvLayer; 3],
    extractor: Option<Extractor>,
}

impl<T: Scalar> Generator<T> {
    pub fn build(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        if spec.base_width == 0 {
            return Err(Error::config("base_width", "must be at least 1"));
        }
        if matches!(spec.global_features, GlobalFeatures::Extractor { dim: 0 } | GlobalFeatures::External { dim: 0 }) {
            return Err(Error::config("feature_dim", "must be at least 1"));
        }
        let mut params = ParamSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lb = LayerBuilder {
            params: &mut params,
            rng: &mut rng,
            batch_norm: spec.batch_norm,
        };
        let widths = spec.widths();

        let mut encoder = Vec::with_capacity(DEPTH);
        let mut cin = GeneratorSpec::INPUT_CHANNELS;
        for (i, &w) in widths.iter().enumerate() {
            encoder.push([
                lb.conv(&format!("enc{i}.conv0"), cin, w, true),
                lb.conv(&format!("enc{i}.conv1"), w, w, true),
            ]);
            cin = w;
        }

        let extractor = match spec.global_features {
            GlobalFeatures::Extractor { dim } => {
                let w = spec.base_width;
                Some(Extractor {
                    convs: [
                        lb.conv("extractor.conv0", 1, w, true),
                        lb.conv("extractor.conv1", w, 2 * w, true),
                        lb.conv("extractor.conv2", 2 * w, dim, true),
                    ],
                })
            }
            _ => None,
        };

        // decoder block i reads the deepest stream first; its merge appends
        // the skip of encoder block DEPTH-1-i, which has the same width
        let mut decoder = Vec::with_capacity(DEPTH);
        let mut cin = widths[DEPTH - 1] + spec.global_features.dim();
        for i in 0..DEPTH {
            let w = widths[DEPTH - 1 - i];
            decoder.push([
                lb.conv(&format!("dec{i}.conv0"), cin, w, true),
                lb.conv(&format!("dec{i}.conv1"), w, w, true),
            ]);
            cin = 2 * w;
        }

        let w = spec.base_width;
        let head = [
            lb.conv("head.conv0", cin, w, true),
            lb.conv("head.conv1", w, w, true),
            lb.conv("head.conv2", w, GeneratorSpec::OUTPUT_CHANNELS, false),
        ];
        Ok(Self {
            spec,
            params,
            encoder,
            decoder,
            head,
            extractor,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            spec: self.spec,
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            head: self.head.clone(),
            extractor: self.extractor.clone(),
        }
    }

    /// `G(L, z)` as a `[B, 1, S, S]` chrominance plane. `p` holds this
    /// generator's parameters as bound by [`ParamSet::bind`].
    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], l: Var, z: Var, features: Option<Var>) -> Result<Var> {
        self.forward_impl(tape, p, l, z, features, true)
    }

    pub(crate) fn forward_impl(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        l: Var,
        z: Var,
        features: Option<Var>,
        use_skips: bool,
    ) -> Result<Var> {
        const OP: &str = "generator_forward";
        let (b, c, h, w) = check_spatial(tape.value(l), OP)?;
        if c != 1 {
            return Err(Error::Shape {
                op: OP,
                axis: "channel",
                expected: 1,
                found: c,
            });
        }
        tape.value(l).expect_same_shape(tape.value(z), OP)?;

        let features = match (self.spec.global_features, &self.extractor, features) {
            (GlobalFeatures::None, _, None) => None,
            (GlobalFeatures::None, _, Some(_)) => {
                return Err(Error::precondition(OP, "this generator takes no global features"));
            }
            (GlobalFeatures::External { .. }, _, None) => {
                return Err(Error::precondition(OP, "global features are required"));
            }
            (_, _, Some(f)) => Some(f),
            (GlobalFeatures::Extractor { .. }, Some(ex), None) => Some(Self::extract(ex, tape, p, l)?),
            (GlobalFeatures::Extractor { .. }, None, None) => unreachable!("extractor built with spec"),
        };

        let mut x = tape.concat_channels(l, z)?;
        let mut skips = Vec::with_capacity(DEPTH);
        for [c0, c1] in &self.encoder {
            x = c0.apply(tape, p, x)?;
            x = c1.apply(tape, p, x)?;
            skips.push(x);
            x = tape.maxpool2(x)?;
        }

        if let Some(f) = features {
            let dim = self.spec.global_features.dim();
            let shape = tape.value(f).shape().to_vec();
            if shape != [b, dim] {
                return Err(Error::Shape {
                    op: OP,
                    axis: "feature",
                    expected: dim,
                    found: shape.get(1).copied().unwrap_or(0),
                });
            }
            let (bh, bw) = (h >> DEPTH, w >> DEPTH);
            let spread = tape.broadcast_spatial(f, bh, bw)?;
            x = tape.concat_channels(x, spread)?;
        }

        for [c0, c1] in &self.decoder {
            x = c0.apply(tape, p, x)?;
            x = c1.apply(tape, p, x)?;
            x = tape.upsample2(x)?;
            let mut skip = skips.pop().expect("one skip per encoder block");
            if !use_skips {
                let zeros = Tensor::zeros(tape.value(skip).shape().to_vec());
                skip = tape.constant(zeros);
            }
            x = tape.concat_channels(x, skip)?;
        }

        for layer in &self.head {
            x = layer.apply(tape, p, x)?;
        }
        Ok(x)
    }

    fn extract(ex: &Extractor, tape: &mut Tape<T>, p: &[Var], l: Var) -> Result<Var> {
        let mut x = ex.convs[0].apply(tape, p, l)?;
        x = tape.maxpool2(x)?;
        x = ex.convs[1].apply(tape, p, x)?;
        x = tape.maxpool2(x)?;
        x = ex.convs[2].apply(tape, p, x)?;
        tape.global_avg_pool(x)
    }

    /// Gradient-free forward on plain tensors.
    pub fn predict(&self, l: &Tensor<T>, z: &Tensor<T>, features: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let lv = tape.constant(l.clone());
        let zv = tape.constant(z.clone());
        let fv = features.map(|f| tape.constant(f.clone()));
        let out = self.forward(&mut tape, &p, lv, zv, fv)?;
        Ok(tape.value(out).clone())
    }

    #[cfg(test)]
    pub(crate) fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.encoder
            .iter()
            .flatten()
            .chain(self.extractor.iter().flat_map(|e| e.convs.iter()))
            .chain(self.decoder.iter().flatten())
            .chain(self.head.iter())
    }

    /// The first conv of each decoder block after the first, plus the head's
    /// first conv: the layers that read merged skip channels.
    #[cfg(test)]
    pub(crate) fn merge_readers(&self) -> Vec<&ConvLayer> {
        self.decoder
            .iter()
            .skip(1)
            .map(|b| &b[0])
            .chain(std::iter::once(&self.head[0]))
            .collect()
    }
}
