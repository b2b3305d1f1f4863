//! Frequency-domain image forensics.
//!
//! Two families of frequency-aware forgery clues are computed here: a
//! band decomposition of the full-image DCT spectrum (`fad`) and log-magnitude
//! band statistics over sliding-window DCTs (`lfs`). Both use learnable
//! residual filters on top of fixed band masks (`filterbank`). A cross-attention
//! block (`mixblock`) fuses two feature streams, and `toynet` holds a small
//! two-stream classifier trained end to end with hand-written backward passes.
//! `synth` generates a deterministic forgery corpus and `eval` scores detectors.

pub mod config;
pub mod dct;
pub mod error;
pub mod eval;
pub mod fad;
pub mod filterbank;
pub mod image;
pub mod lfs;
pub mod mixblock;
pub mod persist;
pub mod pipeline;
pub mod plane;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod toynet;

pub use error::{Error, Result};
pub use image::{Image, QualityTier};
pub use plane::Plane;
