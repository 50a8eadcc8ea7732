//! Inpainting engine for gridded precipitation-like field sequences.
//!
//! The crate trains a v-prediction denoising diffusion model with a 3D U-Net
//! backbone to fill satellite-swath gaps in `(L, H, W)` field sequences, and
//! ships the surrounding machinery: noise schedules, condition-tensor
//! assembly, non-learned baselines, hole-domain metrics, a synthetic data
//! generator, and a small binary grid-file format for fields, checkpoints,
//! and reports.

pub mod baselines;
pub mod condition;
pub mod diffusion;
pub mod error;
pub mod field;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod schedule;
pub mod synthgen;
pub mod tensor;
pub mod unet;

pub use error::{Error, Result};
