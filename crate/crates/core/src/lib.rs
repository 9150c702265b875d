//! Trimap-free human matting that learns from a mix of finely and coarsely
//! annotated data.
//!
//! The pipeline has three networks. A mask prediction network estimates a
//! coarse foreground mask at low resolution, a quality unification network
//! maps masks of varying quality to a common level, and a matting refinement
//! network predicts foreground colour and alpha at four times the mask
//! resolution. Training runs the three stages in order, freezing each one.

pub mod config;
pub mod degrade;
pub mod error;
pub mod imagery;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod pipeline;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
