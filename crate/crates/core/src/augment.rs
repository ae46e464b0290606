//! Depth augmentation for real-face depth maps: foreground pixels (value
//! above a fixed threshold) are compressed by a random scaler and lifted by a
//! random offset, background pixels are only scaled.

use alloc::format;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const SCALER_RANGE: (f64, f64) = (1.0 / 8.0, 1.0 / 5.0);
pub const OFFSET_RANGE: (f64, f64) = (100.0, 200.0);
pub const FOREGROUND_THRESHOLD: u8 = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub scaler: f64,
    pub offset: f64,
    /// Pixels strictly above this receive the offset.
    pub threshold: u8,
}

impl AugmentParams {
    pub fn new(scaler: f64, offset: f64) -> Result<Self> {
        let p = AugmentParams {
            scaler,
            offset,
            threshold: FOREGROUND_THRESHOLD,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(SCALER_RANGE.0..=SCALER_RANGE.1).contains(&self.scaler) {
            return Err(Error::invalid(format!("scaler {} outside [1/8, 1/5]", self.scaler)));
        }
        if !(OFFSET_RANGE.0..=OFFSET_RANGE.1).contains(&self.offset) {
            return Err(Error::invalid(format!("offset {} outside [100, 200]", self.offset)));
        }
        Ok(())
    }
}

/// Uniform draws of scaler and offset.
pub fn draw_augment_params<R: Rng + ?Sized>(rng: &mut R) -> AugmentParams {
    let scaler = rng.random_range(SCALER_RANGE.0..=SCALER_RANGE.1);
    let offset = rng.random_range(OFFSET_RANGE.0..=OFFSET_RANGE.1);
    AugmentParams {
        scaler,
        offset,
        threshold: FOREGROUND_THRESHOLD,
    }
}

/// Maps one pixel: `v·scaler + offset` if `v > threshold`, else `v·scaler`;
/// rounded half-to-even and saturated to `[0, 255]`.
pub fn augment_pixel(v: u8, params: &AugmentParams) -> u8 {
    let off = if v > params.threshold { params.offset } else { 0.0 };
    let out = libm::rint(v as f64 * params.scaler + off);
    out.clamp(0.0, 255.0) as u8
}

pub fn augment_depth(image: &GrayImage, params: &AugmentParams) -> GrayImage {
    GrayImage {
        width: image.width,
        height: image.height,
        pixels: image.pixels.iter().map(|&v| augment_pixel(v, params)).collect(),
    }
}
