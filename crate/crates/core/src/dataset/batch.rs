use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::colorspace::NetImagePair;
use crate::tensor::Tensor;

/// One training minibatch; every tensor is `[B, 1, S, S]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub inputs_l: Tensor<f32>,
    pub targets_a: Tensor<f32>,
    pub targets_b: Tensor<f32>,
    pub noise_z: Tensor<f32>,
    /// Corpus indices of the examples, in batch order.
    pub indices: Vec<usize>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Uniform `[-1, 1]` noise drawn from its own seeded stream.
pub fn uniform_noise(seed: u64, shape: impl Into<Vec<usize>>) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0f32..=1.0))
}

/// Iterator over the minibatches of one epoch.
pub struct Batches<'a> {
    examples: &'a [&'a NetImagePair],
    order: Vec<usize>,
    noise_seeds: Vec<u64>,
    batch_size: usize,
    pos: usize,
}

/// Epoch `epoch` of a seeded stream: the permutation and every example's
/// noise seed are drawn up front from `(seed, epoch)`, so the stream does not
/// depend on how batches are later consumed.
pub fn batches<'a>(examples: &'a [&'a NetImagePair], batch_size: usize, seed: u64, epoch: u64) -> Batches<'a> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let noise_seeds = order.iter().map(|_| rng.next_u64()).collect();
    Batches {
        examples,
        order,
        noise_seeds,
        batch_size: batch_size.max(1),
        pos: 0,
    }
}

impl<'a> Batches<'a> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn steps(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches<'_> {
    type Item = Minibatch;

    fn next(&mut self) -> Option<Minibatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        let seeds = &self.noise_seeds[self.pos..end];
        self.pos = end;

        let gather = |f: &dyn Fn(&NetImagePair) -> &Tensor<f32>| {
            let parts: Vec<Tensor<f32>> = idx.iter().map(|&i| f(self.examples[i]).clone()).collect();
            Tensor::stack_outer(&parts).expect("corpus examples share one size")
        };
        let inputs_l = gather(&|p| &p.input_l);
        let plane_shape = self.examples[idx[0]].input_l.shape().to_vec();
        let noise: Vec<Tensor<f32>> = seeds.iter().map(|&s| uniform_noise(s, plane_shape.clone())).collect();
        Some(Minibatch {
            targets_a: gather(&|p| &p.target_a),
            targets_b: gather(&|p| &p.target_b),
            noise_z: Tensor::stack_outer(&noise).expect("same shape"),
            inputs_l,
            indices: idx.to_vec(),
        })
    }
}
