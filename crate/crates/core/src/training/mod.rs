//! Alternating discriminator/generator updates for the two channel GANs,
//! with metrics logging and resumable checkpoints.

mod checkpoint;
mod config;
mod gradcheck;
mod loss;
mod optim;
mod trainer;

pub use checkpoint::{Checkpoint, CheckpointMeta, FORMAT_VERSION, MAGIC};
pub use gradcheck::NetworkGradCheck;
pub use config::{parse_key_values, Mode, TrainConfig};
pub use loss::{adversarial_loss, d_loss, g_loss, l2_loss, l2_per_example, LOG_FLOOR};
pub use optim::SgdMomentum;
pub use trainer::{checkpoint_path, ChannelGan, StepRecord, Trainer, METRICS_FILE, METRICS_HEADER};
