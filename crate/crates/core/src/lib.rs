//! Building damage assessment pipeline: deterministic synthetic scenes,
//! Siamese U-Net training with Dice+Focal losses, xView2-style metrics,
//! and resolution/generalization analysis harnesses.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod raster_ops;
pub mod scene_data;
pub mod training;

pub use error::{Error, Result};
