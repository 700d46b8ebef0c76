//! Trained nonlinear reaction-diffusion denoising for Poisson-corrupted
//! images: the multi-stage diffusion process, its analytic training
//! gradients, peak-scaled noise synthesis, and restoration metrics.
//!
//! The crate is `no_std` (with `alloc`); IO, file formats, and the command
//! line live in the companion `trdpd` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod diffusion;
pub mod error;
pub mod image;
pub mod influence;
pub mod metrics;
pub mod noise;
pub mod training;

pub use diffusion::{diffusion_step, forward, prox_poisson, DiffusionModel, StageParams};
pub use error::{Error, Result};
pub use image::{conv2d_adjoint, conv2d_sym, rotate180, Image, Kernel};
pub use influence::{phi, phi_prime, phi_weight_basis, InfluenceFunction, RbfGrid};
pub use metrics::{evaluate_set, psnr, ssim, EvalReport};
pub use noise::{sample_poisson, scale_to_peak, CounterRng, NoiseSpec};
pub use training::{
    backprop, finite_difference_check, forward_with_tape, loss, train_joint, train_joint_with,
    BackpropTape, FilterBasis, ModelParams, ParamGradient, TrainConfig, TrainOutcome,
    TrainingSample,
};
