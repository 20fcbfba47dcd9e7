//! Gaussian and Gamma denoising diffusion.
//!
//! The forward processes, reverse samplers, a small MLP noise predictor with
//! an exact gradient, training loops, the variational-bound terms of the Gamma
//! model, and a numerical verification suite.

pub mod analysis;
pub mod cli;
pub mod denoiser;
pub mod diffusion;
pub mod distributions;
pub mod error;
pub mod io;
pub mod rng;
pub mod schedule;
pub mod stats;
pub mod tensor;
pub mod training;
pub mod verify;
pub mod vlb;

pub use error::{Error, Result};
