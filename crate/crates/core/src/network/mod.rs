//! Generator and discriminator networks built from 3x3 conv blocks.
//!
//! One generator/discriminator pair exists per chrominance channel; the two
//! pairs share no parameters.

mod discriminator;
mod generator;
mod params;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use discriminator::{Discriminator, DiscriminatorSpec};
pub use generator::{Generator, GeneratorSpec, GlobalFeatures};
pub use params::ParamSet;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Number of pool/upsample stages.
pub const DEPTH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelTarget {
    A,
    B,
}

impl ChannelTarget {
    pub const BOTH: [ChannelTarget; 2] = [ChannelTarget::A, ChannelTarget::B];

    pub fn tag(self) -> char {
        match self {
            ChannelTarget::A => 'A',
            ChannelTarget::B => 'B',
        }
    }
}

impl fmt::Display for ChannelTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())
    }
}

/// `(batch, channels, height, width)` after checking both sides survive
/// [`DEPTH`] halvings.
pub(crate) fn check_spatial<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    let (b, c, h, w) = t.dims4(op)?;
    let unit = 1 << DEPTH;
    if h == 0 || w == 0 || h % unit != 0 || w % unit != 0 {
        return Err(Error::precondition(
            op,
            format!("spatial size {h}x{w} must be a positive multiple of {unit}"),
        ));
    }
    Ok((b, c, h, w))
}
