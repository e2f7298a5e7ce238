//! Random-access video codec engine built on hierarchical B-frame coding.
//!
//! The pipeline codes a raw YUV 4:2:0 sequence as independent groups of
//! pictures: the GoP boundary frames are intra coded, everything between is
//! bidirectionally predicted from one past and one future reconstruction.
//! Per-level gain scaling controls the rate split across the hierarchy,
//! a range coder with probability-based skipping handles entropy coding,
//! and the evaluation side provides PSNR/BD-rate tooling.

pub mod codec;
pub mod entropy;
pub mod frame;
pub mod gop;
pub mod metrics;
pub mod motion;
pub mod rate;
pub mod synth;
pub mod transform;

mod error;

pub use error::{Error, Result};
