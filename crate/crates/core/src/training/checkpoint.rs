//! Binary checkpoint: magic, version, JSON metadata, named f32 tensors, CRC-32.
//!
//! ```text
//! b"CHROMACK" | u32 version | u64 meta_len | meta (JSON)
//! u64 count | count x { u32 name_len | name | u32 rank | rank x u64 dim | f32 data }
//! u32 crc32 of everything above
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::trainer::{ChannelGan, Trainer};
use crate::error::{Error, Result};
use crate::network::{ChannelTarget, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, ParamSet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CHROMACK";
pub const FORMAT_VERSION: u32 = 1;

const MOMENTUM_CONVENTION: &str = "v = momentum * v + grad; param -= learning_rate * v";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    /// Completed epochs; training resumes with this epoch's batch stream.
    pub epoch: u64,
    pub step: u64,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub momentum_convention: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn push_set(out: &mut Vec<(String, Tensor<f32>)>, prefix: &str, set: &ParamSet<f32>) {
    for (name, t) in set.iter() {
        out.push((format!("{prefix}/{name}"), t.clone()));
    }
}

fn push_velocity(out: &mut Vec<(String, Tensor<f32>)>, prefix: &str, set: &ParamSet<f32>, v: &[Tensor<f32>]) {
    for (name, t) in set.names().iter().zip(v) {
        out.push((format!("{prefix}/{name}"), t.clone()));
    }
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer) -> Self {
        let mut tensors = Vec::new();
        for gan in &trainer.gans {
            let c = gan.channel.tag();
            push_set(&mut tensors, &format!("{c}/generator"), gan.generator.params());
            push_set(&mut tensors, &format!("{c}/discriminator"), gan.discriminator.params());
            push_velocity(
                &mut tensors,
                &format!("{c}/generator_velocity"),
                gan.generator.params(),
                gan.g_opt.velocities(),
            );
            push_velocity(
                &mut tensors,
                &format!("{c}/discriminator_velocity"),
                gan.discriminator.params(),
                gan.d_opt.velocities(),
            );
        }
        Self {
            meta: CheckpointMeta {
                config: trainer.config.clone(),
                epoch: trainer.epoch,
                step: trainer.step,
                generator: trainer.config.generator_spec(),
                discriminator: trainer.config.discriminator_spec(),
                momentum_convention: MOMENTUM_CONVENTION.to_string(),
            },
            tensors,
        }
    }

    /// Tensors under `prefix/`, with the prefix stripped, in stored order.
    fn section(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        let p = format!("{prefix}/");
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(&p).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    pub fn generator(&self, channel: ChannelTarget) -> Result<Generator<f32>> {
        let mut g = Generator::build(self.meta.generator, 0)?;
        g.params_mut().replace_from(&self.section(&format!("{channel}/generator")))?;
        Ok(g)
    }

    pub fn discriminator(&self, channel: ChannelTarget) -> Result<Discriminator<f32>> {
        let mut d = Discriminator::build(self.meta.discriminator, 0)?;
        d.params_mut().replace_from(&self.section(&format!("{channel}/discriminator")))?;
        Ok(d)
    }

    /// Rebuilds the full training state, optimizer velocities included.
    pub fn into_trainer(&self) -> Result<Trainer> {
        let config = self.meta.config.clone();
        config.validate()?;
        if config.generator_spec() != self.meta.generator || config.discriminator_spec() != self.meta.discriminator {
            return Err(Error::Malformed("network specs disagree with the stored config".into()));
        }
        let mut gans = Vec::with_capacity(2);
        for channel in ChannelTarget::BOTH {
            let mut gan = ChannelGan::from_parts(&config, channel, self.generator(channel)?, self.discriminator(channel)?);
            let strip = |s: Vec<(String, Tensor<f32>)>| s.into_iter().map(|(_, t)| t).collect::<Vec<_>>();
            gan.g_opt.set_velocities(strip(self.section(&format!("{channel}/generator_velocity"))))?;
            gan.d_opt.set_velocities(strip(self.section(&format!("{channel}/discriminator_velocity"))))?;
            gans.push(gan);
        }
        let gans: [ChannelGan; 2] = gans.try_into().map_err(|_| Error::Malformed("channel count".into()))?;
        Ok(Trainer {
            config,
            gans,
            epoch: self.meta.epoch,
            step: self.meta.step,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(Error::Truncated(format!("{} bytes", bytes.len())));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Malformed("not a checkpoint file (bad magic)".into()));
        }
        let mut r = Reader { buf: bytes, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < r.pos + 4 {
            return Err(Error::Truncated("missing checksum".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        let parsed = parse_body(&mut Reader { buf: body, pos: r.pos });
        if stored != computed {
            // a short file surfaces as running out of bytes mid-structure
            return Err(match parsed {
                Err(e @ Error::Truncated(_)) => e,
                _ => Error::Checksum { stored, computed },
            });
        }
        parsed
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn parse_body(r: &mut Reader<'_>) -> Result<Checkpoint> {
    let meta_len = r.len()?;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Malformed(format!("metadata: {e}")))?;
    let count = r.len()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.len()?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Malformed(format!("tensor `{name}` is too large")))?;
        let data = r
            .take(numel)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != r.buf.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", r.buf.len() - r.pos)));
    }
    Ok(Checkpoint { meta, tensors })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Truncated(format!("needed {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Malformed(format!("length {v} overflows")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::uniform_noise;
    use crate::training::config::Mode;
    use crate::training::trainer::Trainer;

    fn trainer(mode: Mode) -> Trainer {
        Trainer::new(TrainConfig {
            base_width: 2,
            image_size: 16,
            mode,
            ..TrainConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let t = trainer(Mode::General);
        let bytes = Checkpoint::from_trainer(&t).to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let again = Checkpoint::from_trainer(&back.into_trainer().unwrap()).to_bytes();
        assert_eq!(again, bytes);
    }

    #[test]
    fn loaded_generator_is_bitwise_equal() {
        let t = trainer(Mode::General);
        let ck = Checkpoint::from_bytes(&Checkpoint::from_trainer(&t).to_bytes()).unwrap();
        let l = uniform_noise(1, [1, 1, 16, 16]).map(|v| v.abs());
        let z = uniform_noise(2, [1, 1, 16, 16]);
        for c in ChannelTarget::BOTH {
            let a = t.gan(c).generator.predict(&l, &z, None).unwrap();
            let b = ck.generator(c).unwrap().predict(&l, &z, None).unwrap();
            let bits = |x: &Tensor<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
        }
    }

    #[test]
    fn makeup_mode_has_no_extractor() {
        let ck = Checkpoint::from_trainer(&trainer(Mode::Makeup));
        assert!(ck.tensors.iter().all(|(n, _)| !n.contains("extractor")));
        let ck = Checkpoint::from_trainer(&trainer(Mode::General));
        assert!(ck.tensors.iter().any(|(n, _)| n.contains("extractor")));
    }

    #[test]
    fn corruption_is_classified() {
        let bytes = Checkpoint::from_trainer(&trainer(Mode::Makeup)).to_bytes();

        for cut in [3, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(Error::Truncated(_)) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }

        let mut flipped = bytes.clone();
        let i = bytes.len() - 100;
        flipped[i] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checksum { .. })));

        let mut future = bytes.clone();
        future[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&future),
            Err(Error::VersionMismatch { found: 7, expected: 1 })
        ));

        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Malformed(_))));
    }
}
