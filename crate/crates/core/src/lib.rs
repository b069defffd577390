//! Core of `mmcse`: a small reverse-mode tensor engine, a shared Transformer
//! encoder with text, image and audio front-ends, the contrastive objectives,
//! AdamW, the alternating multi-task training loop, evaluation metrics and
//! synthetic data generators.
//!
//! The crate is `no_std` and only needs `alloc`. Every transcendental goes
//! through `libm`, so results are bit-identical across platforms. File
//! formats, the CLI and anything else touching IO live in the `mmcse` crate.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod autograd;
pub mod data;
pub mod encoder;
mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
