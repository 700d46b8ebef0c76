//! Tooling around the `trdpd-core` diffusion denoiser: image IO, the
//! binary model format, training configuration files, scoped-thread
//! parallel drivers, and the CLI command implementations.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod model_file;
pub mod parallel;
pub mod pgm;
pub mod pngio;
pub mod synth;

pub use error::{Error, Result};
