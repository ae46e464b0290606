//! Grayscale samples and the model input transform.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::arch::INPUT_SIZE;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Fake = 0,
    Real = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Fake),
            1 => Some(Label::Real),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Depth,
    Ir,
    Rgb,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Depth => "depth",
            Modality::Ir => "ir",
            Modality::Rgb => "rgb",
        }
    }
}

impl core::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(Modality::Depth),
            "ir" => Ok(Modality::Ir),
            "rgb" => Ok(Modality::Rgb),
            _ => Err(Error::invalid(format!("unknown modality '{s}'"))),
        }
    }
}

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::invalid(format!("image: {} pixels for {width}x{height}", pixels.len())));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn blank(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSample {
    pub image: GrayImage,
    pub label: Label,
    pub modality: Modality,
}

/// Writes the model input for `image` (values scaled to `[0, 1]`, the gray
/// plane replicated into three channels) into `out`, which must hold
/// `3·224·224` values.
pub fn preprocess_into<T: Scalar>(image: &GrayImage, out: &mut [T]) -> Result<()> {
    if image.width != INPUT_SIZE || image.height != INPUT_SIZE {
        return Err(Error::invalid(format!(
            "preprocess: expected {INPUT_SIZE}x{INPUT_SIZE} image, got {}x{}",
            image.width, image.height
        )));
    }
    let plane = INPUT_SIZE * INPUT_SIZE;
    if out.len() != 3 * plane {
        return Err(Error::invalid(format!("preprocess: output buffer holds {} values, need {}", out.len(), 3 * plane)));
    }
    let inv = T::one() / T::from_f64(255.0);
    let (first, rest) = out.split_at_mut(plane);
    for (o, &p) in first.iter_mut().zip(&image.pixels) {
        *o = T::from_f64(p as f64) * inv;
    }
    rest[..plane].copy_from_slice(first);
    rest[plane..].copy_from_slice(first);
    Ok(())
}

/// `1 × 3 × 224 × 224` model input for one image.
pub fn preprocess<T: Scalar>(image: &GrayImage) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(Shape::new(1, 3, INPUT_SIZE, INPUT_SIZE));
    preprocess_into(image, t.data_mut())?;
    Ok(t)
}

/// Stacks images into an `N × 3 × 224 × 224` batch.
pub fn preprocess_batch<T: Scalar>(images: &[&GrayImage]) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(Shape::new(images.len(), 3, INPUT_SIZE, INPUT_SIZE));
    let len = 3 * INPUT_SIZE * INPUT_SIZE;
    for (img, chunk) in images.iter().zip(t.data_mut().chunks_mut(len)) {
        preprocess_into(img, chunk)?;
    }
    Ok(t)
}
