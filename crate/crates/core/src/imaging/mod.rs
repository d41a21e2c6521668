//! Thermal rasters, contrast normalization and grayscale conversion.

mod clahe;
mod gray;
pub mod io;
mod stretch;

pub use clahe::{clahe, ClaheParams};
pub use gray::{channel_pca, to_gray_fixed, to_gray_pca_mix, to_gray_random_mix, RgbImage};
pub use stretch::{stretch_pair, stretch_raster, stretch_single, PairStretch};

use crate::error::{Error, Result};
use crate::geometry::ImuSample;
use crate::raster::Plane;

/// Single-channel image with values in `[0, 1]`.
pub type GrayImage = Plane<f32>;

/// Smallest frame side accepted by [`ThermalFrame::new`].
pub const MIN_FRAME_SIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// One raw thermal capture.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermalFrame {
    pub pixels: Plane<u16>,
    pub bit_depth: BitDepth,
    pub timestamp_ns: u64,
    pub frame_id: u64,
    pub attitude: Option<ImuSample>,
}

impl ThermalFrame {
    pub fn new(pixels: Plane<u16>, bit_depth: BitDepth, frame_id: u64, timestamp_ns: u64) -> Result<Self> {
        if pixels.width() < MIN_FRAME_SIDE || pixels.height() < MIN_FRAME_SIDE {
            return Err(Error::invalid(format!(
                "frame {}x{} smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}",
                pixels.width(),
                pixels.height()
            )));
        }
        let max = bit_depth.max_value();
        if pixels.data().iter().any(|&v| v as u32 > max) {
            return Err(Error::invalid("pixel value exceeds bit depth"));
        }
        Ok(Self {
            pixels,
            bit_depth,
            timestamp_ns,
            frame_id,
            attitude: None,
        })
    }

    pub fn with_attitude(mut self, imu: Option<ImuSample>) -> Self {
        self.attitude = imu;
        self
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }
}

/// Frame normalization: percentile stretch (16-bit) or /255 (8-bit), then CLAHE.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    pub lo_pct: f64,
    pub hi_pct: f64,
    pub clahe: Option<ClaheParams>,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self {
            lo_pct: 0.01,
            hi_pct: 0.99,
            clahe: Some(ClaheParams::default()),
        }
    }
}

impl Preprocessor {
    pub fn apply(&self, frame: &ThermalFrame) -> Result<GrayImage> {
        let stretched = match frame.bit_depth {
            BitDepth::Eight => frame.pixels.map(|&v| v as f32 / 255.0),
            BitDepth::Sixteen => stretch_single(frame, self.lo_pct, self.hi_pct)?,
        };
        match &self.clahe {
            Some(p) => clahe(&stretched, p),
            None => Ok(stretched),
        }
    }
}
