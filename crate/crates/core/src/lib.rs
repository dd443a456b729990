//! Deterministic math core for reference-guided video appearance editing.
//!
//! The pipeline propagates an appearance edit made on one video frame (the
//! *reference*, a spatially aligned edit of the *anchor* frame) to every other
//! frame of the clip in two stages:
//!
//! 1. a zero-shot stage ([`zero`]) that DDIM-inverts target and reference
//!    frames and denoises the target with correspondence-masked cross-image
//!    attention, injecting reference keys/values into designated blocks, and
//! 2. a restoration stage ([`hero`]) that fine-tunes low-rank adapters on
//!    anchor-derived training pairs and re-generates every frame conditioned
//!    on the stage-1 output (and optionally the original frame).
//!
//! Supporting subsystems: dense f64 tensors with reverse-mode gradients
//! ([`tensor`], [`ops`], [`autograd`], [`optim`]), a from-scratch patch-token
//! diffusion transformer with DDIM sampling/inversion and attention-state
//! caching ([`model`]), feature correspondence and top-k attention masks
//! ([`corr`]), a procedural scene generator with exact flow and part masks
//! ([`scene`]), and PSNR/SSIM metrics ([`metrics`]).
//!
//! The crate is `no_std` (with `alloc`); file formats, the CLI, and
//! experiment orchestration live in the companion `framepaint` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autograd;
pub mod corr;
pub mod fmath;
pub mod frame;
pub mod gradcheck;
pub mod hero;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod scene;
pub mod tensor;
pub mod zero;

use alloc::string::String;

/// Errors surfaced by the math core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor or image dimensions do not line up.
    Shape(String),
    /// A configuration value is out of its legal range.
    Config(String),
    /// An index (block, timestep, frame, ...) is out of range.
    Index(String),
    /// Input data violates a precondition (for example NaN scores).
    Data(String),
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Index(m) => write!(f, "index error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! err {
    ($kind:ident, $($arg:tt)*) => {
        $crate::Error::$kind(alloc::format!($($arg)*))
    };
}
pub(crate) use err;
