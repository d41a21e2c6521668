//! Online self-supervised water segmentation for thermal imagery.
//!
//! A pretrained single-channel segmentation network is adapted while it runs,
//! using labels generated from the incoming frames themselves:
//!
//! - [`texture`]: superpixel keypoint density (water is smooth, land is not),
//! - [`motion`]: residual optical flow after ego-motion removal,
//! - [`geometry`]: IMU horizon line or a sky mask marking definite non-water.
//!
//! [`online`] merges those cues with a momentum teacher's predictions and runs
//! the adaptation loop, [`runtime`] wires everything into a concurrent
//! streaming pipeline, and [`synth`] renders procedural near-shore scenes with
//! ground truth for testing.

pub mod error;
pub mod evalio;
pub mod geometry;
pub mod imaging;
pub mod motion;
pub mod online;
pub mod raster;
pub mod runtime;
pub mod segnet;
pub mod synth;
pub mod texture;

pub use error::{Error, Result};
pub use geometry::{CameraModel, HorizonLine, ImuSample};
pub use imaging::{BitDepth, GrayImage, ThermalFrame};
pub use online::{OnlineConfig, SegMask};
pub use raster::{Mask, Plane, ProbabilityMap, Rect};
pub use segnet::SegModel;

/// Environment variable that fixes every random stream in the pipeline.
pub const SEED_ENV: &str = "THERMOSEG_SEED";

/// Seed from [`SEED_ENV`] if set and parseable, otherwise `default`.
pub fn seed_from_env(default: u64) -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(default)
}
