//! Undersampled MRI reconstruction with an attention-selection GAN, built on
//! an in-crate reverse-mode autodiff engine.
//!
//! Layout:
//! - [`engine`]: tensors, the tape, differentiable primitives, gradient checks
//! - [`kspace`]: centred FFT, sampling masks, zero-filled input, consistency residual
//! - [`blocks`]: U-net, LCFI++, CBAM, SCI, RRDB, attention selection, generator, discriminator
//! - [`losses`]: reconstruction, LSGAN, perceptual and structural-similarity objectives
//! - [`data`]: phantoms, samples, datasets, tensor and image files
//! - [`train`]: configuration, optimisation, checkpoints, metrics, evaluation

pub mod blocks;
pub mod data;
pub mod engine;
mod error;
pub mod kspace;
pub mod losses;
pub mod train;

pub use error::{Error, Result};
