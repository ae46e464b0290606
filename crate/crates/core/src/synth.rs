//! Synthetic depth faces. A real face is a hemispherical bump inside an
//! elliptical mask, an attack is a flat plane inside the same kind of mask;
//! both carry Gaussian sensor noise and a zero background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::{GrayImage, Label, LabeledSample, Modality};

pub const SYNTH_SIZE: usize = 224;
pub const NOISE_SIGMA: f64 = 2.0;
pub const PEAK_RANGE: (f64, f64) = (190.0, 210.0);
pub const RIM_RANGE: (f64, f64) = (75.0, 85.0);
pub const PLANE_RANGE: (f64, f64) = (80.0, 220.0);

/// Elliptical face mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceMask {
    pub cx: f64,
    pub cy: f64,
    /// Horizontal semi-axis.
    pub ax: f64,
    /// Vertical semi-axis.
    pub ay: f64,
}

impl FaceMask {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        let c = SYNTH_SIZE as f64 / 2.0;
        FaceMask {
            cx: c + rng.random_range(-4.0..=4.0),
            cy: c + rng.random_range(-4.0..=4.0),
            ax: rng.random_range(68.0..=76.0),
            ay: rng.random_range(88.0..=96.0),
        }
    }

    /// Squared normalised radius of pixel `(x, y)`; inside iff `≤ 1`.
    pub fn radius2(&self, x: usize, y: usize) -> f64 {
        let dx = (x as f64 - self.cx) / self.ax;
        let dy = (y as f64 - self.cy) / self.ay;
        dx * dx + dy * dy
    }
}

/// Deterministic sample of the given kind with its mask.
pub fn synthesize_with_mask(kind: Label, seed: u64) -> (LabeledSample, FaceMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = FaceMask::draw(&mut rng);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let surface: (f64, f64) = match kind {
        Label::Real => (rng.random_range(PEAK_RANGE.0..=PEAK_RANGE.1), rng.random_range(RIM_RANGE.0..=RIM_RANGE.1)),
        Label::Fake => {
            let level = rng.random_range(PLANE_RANGE.0..=PLANE_RANGE.1);
            (level, level)
        }
    };
    let (peak, rim) = surface;
    let mut image = GrayImage::blank(SYNTH_SIZE, SYNTH_SIZE);
    for y in 0..SYNTH_SIZE {
        for x in 0..SYNTH_SIZE {
            let r2 = mask.radius2(x, y);
            if r2 > 1.0 {
                continue;
            }
            let depth = rim + (peak - rim) * libm::sqrt(1.0 - r2);
            let v = libm::rint(depth + noise.sample(&mut rng)).clamp(1.0, 255.0);
            image.pixels[y * SYNTH_SIZE + x] = v as u8;
        }
    }
    (
        LabeledSample {
            image,
            label: kind,
            modality: Modality::Depth,
        },
        mask,
    )
}

pub fn synthesize_sample(kind: Label, seed: u64) -> LabeledSample {
    synthesize_with_mask(kind, seed).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn in_mask_std(img: &GrayImage) -> f64 {
        let vals: alloc::vec::Vec<f64> = img.pixels.iter().filter(|&&p| p > 0).map(|&p| p as f64).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        libm::sqrt(vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64)
    }

    #[test]
    fn real_has_a_bump() {
        for seed in 0..5 {
            let (s, mask) = synthesize_with_mask(Label::Real, seed);
            let cx = libm::round(mask.cx) as usize;
            let cy = libm::round(mask.cy) as usize;
            let centre = s.image.get(cx, cy) as i32;
            // topmost in-mask pixel of the centre column
            let top = (0..SYNTH_SIZE).find(|&y| mask.radius2(cx, y) <= 1.0).unwrap();
            let border = s.image.get(cx, top) as i32;
            assert!(centre - border >= 40, "seed {seed}: centre {centre} border {border}");
        }
    }

    #[test]
    fn fake_is_flat() {
        for seed in 0..5 {
            let s = synthesize_sample(Label::Fake, seed);
            assert!(in_mask_std(&s.image) <= 4.0);
        }
    }

    #[test]
    fn background_is_zero() {
        for kind in [Label::Real, Label::Fake] {
            let (s, mask) = synthesize_with_mask(kind, 3);
            for y in 0..SYNTH_SIZE {
                for x in 0..SYNTH_SIZE {
                    let inside = mask.radius2(x, y) <= 1.0;
                    assert_eq!(s.image.get(x, y) == 0, !inside);
                }
            }
        }
    }

    #[test]
    fn seeded() {
        assert_eq!(synthesize_sample(Label::Real, 42), synthesize_sample(Label::Real, 42));
        assert_ne!(synthesize_sample(Label::Real, 42), synthesize_sample(Label::Real, 43));
    }
}
