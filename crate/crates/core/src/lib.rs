//! Stylized motion generation with a latent diffusion model and a
//! bidirectionally fused style control network.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod motion;
pub mod nn;
pub mod rng;
pub mod control;
pub mod denoiser;
pub mod diffusion;
pub mod guidance;
pub mod pipeline;
pub mod style;
pub mod training;
pub mod vae;

pub use candle_core as candle;
pub use error::{Error, Result};

use candle_core::DType;

/// Floating-point type of every tensor in the crate.
pub const DTYPE: DType = DType::F64;
