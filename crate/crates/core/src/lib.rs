//! Relay diffusion machinery at desk scale.
//!
//! * [`spectral`]: orthonormal 2D DCT, radial PSD/SNR curves, nearest upsampling.
//! * [`noise`]: iid, block and α-mixed Gaussian fields with covariance oracles.
//! * [`schedule`] / [`blur`]: log-normal and truncated noise schedules, blur
//!   schedules, patch-wise heat dissipation and the forward corruption.
//! * [`denoiser`]: preconditioned denoisers (analytic Gaussian posterior mean,
//!   a small convolutional net with hand-written gradients), guidance and loss.
//! * [`sampler`]: the blurring-aware stochastic sampler with Heun correction.
//! * [`relay`]: two-stage orchestration, toy datasets, metrics and sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod blur;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod field;
pub mod noise;
pub mod pgm;
pub mod relay;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use field::{FreqField, ImageField, Tiling};
pub use rng::RandomSource;
