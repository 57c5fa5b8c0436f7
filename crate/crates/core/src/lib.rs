//! Data-dependent signal-to-noise analysis for diffusion and flow-matching
//! training, plus a small flow-matching trainer on 2-D toy data.
//!
//! The crate is organised bottom-up:
//!
//! * [`schedules`] – the four (α, σ) noise schedules and log-SNR in dB.
//! * [`timestep_dist`] – timestep samplers, loss weights and their combined density.
//! * [`snr_pdf`] – Monte-Carlo and change-of-variables estimates of the log-SNR density.
//! * [`data`] – synthetic 2-D datasets and std shifting.
//! * [`net`] – a tiny MLP velocity model with hand-written backprop and AdamW.
//! * [`train`] – the flow-matching loop with MSE and velocity-direction losses.
//! * [`sample`] – Euler/Heun integration of a learned velocity field.
//! * [`eval`] – energy distance and sliced Wasserstein between point sets.

pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod net;
pub mod rng;
pub mod sample;
pub mod schedules;
pub mod snr_pdf;
pub mod timestep_dist;
pub mod train;

pub use error::{Error, Result};

/// A point in the plane.
pub type Point = [f64; 2];
