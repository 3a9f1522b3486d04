use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::loss::{d_loss, g_loss};
use super::optim::SgdMomentum;
use crate::autodiff::{Tape, Var};
use crate::colorspace::NetImagePair;
use crate::dataset::{batches, Corpus, Minibatch};
use crate::error::{Error, Result};
use crate::network::{ChannelTarget, Discriminator, Generator};
use crate::tensor::Tensor;

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "step,channel,d_loss,g_loss";

/// Checkpoint written after `epoch` (1-based) completes.
pub fn checkpoint_path(dir: &Path, epoch: u64) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}

/// Independent seed for one named network.
pub(crate) fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub channel: ChannelTarget,
    pub d_loss: f32,
    pub g_loss: f32,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.step, self.channel, self.d_loss, self.g_loss)
    }
}

/// Generator, discriminator and their optimizers for one chrominance channel.
#[derive(Clone, Debug)]
pub struct ChannelGan {
    pub channel: ChannelTarget,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub g_opt: SgdMomentum<f32>,
    pub d_opt: SgdMomentum<f32>,
    adversarial_weight: f64,
}

fn grads(tape: &Tape<f32>, vars: &[Var]) -> Vec<Tensor<f32>> {
    vars.iter().map(|&v| tape.grad_or_zeros(v)).collect()
}

impl ChannelGan {
    pub fn new(config: &TrainConfig, channel: ChannelTarget) -> Result<Self> {
        let tag = channel.tag();
        let generator = Generator::build(config.generator_spec(), derive_seed(config.seed, &format!("generator/{tag}")))?;
        let discriminator = Discriminator::build(
            config.discriminator_spec(),
            derive_seed(config.seed, &format!("discriminator/{tag}")),
        )?;
        Ok(Self::from_parts(config, channel, generator, discriminator))
    }

    pub(crate) fn from_parts(
        config: &TrainConfig,
        channel: ChannelTarget,
        generator: Generator<f32>,
        discriminator: Discriminator<f32>,
    ) -> Self {
        Self {
            channel,
            g_opt: SgdMomentum::new(generator.params(), config.learning_rate, config.momentum),
            d_opt: SgdMomentum::new(discriminator.params(), config.learning_rate, config.momentum),
            generator,
            discriminator,
            adversarial_weight: config.adversarial_weight,
        }
    }

    fn check(&self, step: u64, which: &'static str, v: f32) -> Result<f32> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Divergence {
                step,
                channel: self.channel.tag(),
                which,
            })
        }
    }

    /// One discriminator update followed by one generator update on the same
    /// minibatch. Losses are those evaluated before each update.
    pub fn train_step(&mut self, l: &Tensor<f32>, target: &Tensor<f32>, z: &Tensor<f32>, step: u64) -> Result<StepRecord> {
        let fake = self.generator.predict(l, z, None)?;

        let mut tape = Tape::new();
        let dp = self.discriminator.params().bind(&mut tape, true);
        let lv = tape.constant(l.clone());
        let real = tape.constant(target.clone());
        let fake = tape.constant(fake);
        let d_real = self.discriminator.forward(&mut tape, &dp, lv, real)?;
        let d_fake = self.discriminator.forward(&mut tape, &dp, lv, fake)?;
        let dl = d_loss(&mut tape, d_real, d_fake)?;
        let d_value = self.check(step, "d_loss", tape.value(dl).data()[0])?;
        tape.backward(dl)?;
        self.d_opt.step(self.discriminator.params_mut(), &grads(&tape, &dp))?;

        let mut tape = Tape::new();
        let gp = self.generator.params().bind(&mut tape, true);
        let lv = tape.constant(l.clone());
        let zv = tape.constant(z.clone());
        let tv = tape.constant(target.clone());
        let pred = self.generator.forward(&mut tape, &gp, lv, zv, None)?;
        let d_pred = if self.adversarial_weight != 0.0 {
            let dp = self.discriminator.params().bind(&mut tape, false);
            Some(self.discriminator.forward(&mut tape, &dp, lv, pred)?)
        } else {
            None
        };
        let gl = g_loss(&mut tape, pred, tv, d_pred, self.adversarial_weight)?;
        let g_value = self.check(step, "g_loss", tape.value(gl).data()[0])?;
        tape.backward(gl)?;
        self.g_opt.step(self.generator.params_mut(), &grads(&tape, &gp))?;

        Ok(StepRecord {
            step,
            channel: self.channel,
            d_loss: d_value,
            g_loss: g_value,
        })
    }
}

/// Both channel GANs plus the position in the training schedule.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub gans: [ChannelGan; 2],
    /// Completed epochs.
    pub epoch: u64,
    /// Completed steps; the next step is numbered `step + 1`.
    pub step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let gans = [
            ChannelGan::new(&config, ChannelTarget::A)?,
            ChannelGan::new(&config, ChannelTarget::B)?,
        ];
        Ok(Self {
            config,
            gans,
            epoch: 0,
            step: 0,
        })
    }

    pub fn gan(&self, channel: ChannelTarget) -> &ChannelGan {
        &self.gans[channel as usize]
    }

    /// Trains both channels on one minibatch, concurrently when more than one
    /// worker is allowed. Records come back as `[A, B]`.
    pub fn train_batch(&mut self, batch: &Minibatch) -> Result<[StepRecord; 2]> {
        let step = self.step + 1;
        let l = &batch.inputs_l;
        let z = &batch.noise_z;
        let [ga, gb] = &mut self.gans;
        let (ra, rb) = if crate::threads::worker_count() > 1 {
            std::thread::scope(|s| {
                let h = s.spawn(|| gb.train_step(l, &batch.targets_b, z, step));
                let ra = ga.train_step(l, &batch.targets_a, z, step);
                (ra, h.join().expect("channel worker panicked"))
            })
        } else {
            (
                ga.train_step(l, &batch.targets_a, z, step),
                gb.train_step(l, &batch.targets_b, z, step),
            )
        };
        let out = [ra?, rb?];
        self.step = step;
        Ok(out)
    }

    /// Runs the next epoch over `pairs`, reporting each record as it lands.
    pub fn train_epoch(&mut self, pairs: &[&NetImagePair], mut on_record: impl FnMut(&StepRecord)) -> Result<()> {
        if pairs.is_empty() {
            return Err(Error::precondition("train_epoch", "empty training set"));
        }
        let size = self.config.image_size;
        let (_, _, h, w) = pairs[0].input_l.dims4("train_epoch")?;
        if h != size || w != size {
            return Err(Error::Shape {
                op: "train_epoch",
                axis: if h != size { "height" } else { "width" },
                expected: size,
                found: if h != size { h } else { w },
            });
        }
        for batch in batches(pairs, self.config.batch_size, self.config.seed, self.epoch) {
            for rec in self.train_batch(&batch)? {
                on_record(&rec);
            }
        }
        self.epoch += 1;
        Ok(())
    }

    /// Trains until `config.epochs`, appending to `out/metrics.csv` and writing
    /// a checkpoint after every epoch.
    pub fn fit(&mut self, corpus: &Corpus, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let metrics_path = out.join(METRICS_FILE);
        let fresh = self.step == 0 || !metrics_path.exists();
        let file = if fresh {
            File::create(&metrics_path)
        } else {
            OpenOptions::new().append(true).open(&metrics_path)
        }
        .map_err(|e| Error::io(&metrics_path, e))?;
        let mut metrics = BufWriter::new(file);
        let werr = |e| Error::io(&metrics_path, e);
        if fresh {
            writeln!(metrics, "{METRICS_HEADER}").map_err(werr)?;
        }
        let pairs = corpus.pairs();
        while self.epoch < self.config.epochs {
            let mut io_result = Ok(());
            self.train_epoch(&pairs, |rec| {
                if io_result.is_ok() {
                    io_result = writeln!(metrics, "{}", rec.csv_row());
                }
            })?;
            io_result.map_err(werr)?;
            metrics.flush().map_err(werr)?;
            let path = checkpoint_path(out, self.epoch);
            super::Checkpoint::from_trainer(self).save(&path)?;
            log::info!("epoch {} done (step {}), wrote {}", self.epoch, self.step, path.display());
        }
        Ok(())
    }
}
