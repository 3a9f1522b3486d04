//! Grayscale-to-color image colorization with one conditional GAN per CIELAB
//! chrominance channel, trained with SGD + momentum on a small reverse-mode
//! autodiff engine.

pub mod autodiff;
pub mod colorspace;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod network;
pub mod tensor;
pub mod threads;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
