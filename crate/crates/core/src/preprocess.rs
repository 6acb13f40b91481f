//! Resize and normalization for evaluation, plus the stochastic
//! augmentation recipe applied to training images.
//!
//! Training order: resize, optional horizontal flip, intensity scaling
//! (clamped to `[0, 1]`), one quarter-turn rotation, normalization.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{GrayImage, ImageError};

pub const FULL_SIZE: usize = 1024;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("pixel standard deviation must be positive, got {0}")]
    NonPositiveSd(f64),
    #[error("invalid augmentation policy: {0}")]
    Policy(String),
    #[error("cannot compute pixel statistics from zero images")]
    NoImages,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub horizontal_flip_prob: f64,
    /// `(low, high)` of the uniform intensity scale factor.
    pub intensity_scale: (f64, f64),
    /// Side length of the square network input.
    pub target_size: usize,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            horizontal_flip_prob: 0.5,
            intensity_scale: (0.9, 1.1),
            target_size: FULL_SIZE,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(0.0..=1.0).contains(&self.horizontal_flip_prob) {
            return Err(PreprocessError::Policy(format!(
                "horizontal_flip_prob {} outside [0, 1]",
                self.horizontal_flip_prob
            )));
        }
        let (lo, hi) = self.intensity_scale;
        if !(lo <= hi) || !(lo > 0.0) {
            return Err(PreprocessError::Policy(format!(
                "intensity_scale ({lo}, {hi}) must satisfy 0 < low <= high"
            )));
        }
        if self.target_size == 0 {
            return Err(PreprocessError::Policy("target_size must be positive".into()));
        }
        Ok(())
    }
}

/// One random draw of the augmentation chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub scale: f32,
    /// Counter-clockwise quarter turns: 0, 1, 2 or 3.
    pub quarter_turns: u8,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        flip: false,
        scale: 1.0,
        quarter_turns: 0,
    };

    pub fn sample<R: Rng + ?Sized>(policy: &AugmentPolicy, rng: &mut R) -> Self {
        let flip = rng.random_bool(policy.horizontal_flip_prob);
        let (lo, hi) = policy.intensity_scale;
        let scale = if lo == hi { lo } else { rng.random_range(lo..=hi) } as f32;
        let quarter_turns = rng.random_range(0..4u8);
        AugmentDraw {
            flip,
            scale,
            quarter_turns,
        }
    }
}

/// Global intensity mean and population standard deviation of the resized
/// training images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelStats {
    pub mean: f64,
    pub sd: f64,
}

impl PixelStats {
    pub fn new(mean: f64, sd: f64) -> Result<Self, PreprocessError> {
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(PreprocessError::NonPositiveSd(sd));
        }
        Ok(PixelStats { mean, sd })
    }

    pub const IDENTITY: PixelStats = PixelStats { mean: 0.0, sd: 1.0 };

    /// Stream the statistics over already-resized images.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a GrayImage>) -> Result<Self, PreprocessError> {
        let (mut n, mut s, mut ss) = (0usize, 0.0f64, 0.0f64);
        for img in images {
            for &p in img.pixels() {
                s += p as f64;
                ss += (p as f64) * (p as f64);
            }
            n += img.pixels().len();
        }
        if n == 0 {
            return Err(PreprocessError::NoImages);
        }
        let mean = s / n as f64;
        let var = (ss / n as f64 - mean * mean).max(0.0);
        PixelStats::new(mean, var.sqrt())
    }
}

fn normalize(img: &mut GrayImage, stats: &PixelStats) {
    let (mean, inv) = (stats.mean as f32, (1.0 / stats.sd) as f32);
    img.pixels_mut().iter_mut().for_each(|p| *p = (*p - mean) * inv);
}

pub fn resize_square(image: &GrayImage, size: usize) -> Result<GrayImage, PreprocessError> {
    Ok(image.resize(size, size)?)
}

/// Resize to `size x size` and normalize.
pub fn prepare_eval(image: &GrayImage, size: usize, stats: &PixelStats) -> Result<GrayImage, PreprocessError> {
    let mut out = resize_square(image, size)?;
    normalize(&mut out, stats);
    Ok(out)
}

/// Apply a specific augmentation draw on top of resizing, then normalize.
pub fn apply_augmentation(
    image: &GrayImage,
    draw: AugmentDraw,
    size: usize,
    stats: &PixelStats,
) -> Result<GrayImage, PreprocessError> {
    let mut out = augment_unnormalized(image, draw, size)?;
    normalize(&mut out, stats);
    Ok(out)
}

/// The augmentation chain up to, but not including, normalization.
pub fn augment_unnormalized(image: &GrayImage, draw: AugmentDraw, size: usize) -> Result<GrayImage, PreprocessError> {
    let mut out = resize_square(image, size)?;
    if draw.flip {
        out = out.flip_horizontal();
    }
    if draw.scale != 1.0 {
        let s = draw.scale;
        out.pixels_mut().iter_mut().for_each(|p| *p = (*p * s).clamp(0.0, 1.0));
    }
    Ok(out.rotate_quarter(draw.quarter_turns))
}

/// Resize, draw and apply the random augmentations, normalize.
pub fn prepare_train<R: Rng + ?Sized>(
    image: &GrayImage,
    policy: &AugmentPolicy,
    stats: &PixelStats,
    rng: &mut R,
) -> Result<GrayImage, PreprocessError> {
    policy.validate()?;
    let draw = AugmentDraw::sample(policy, rng);
    apply_augmentation(image, draw, policy.target_size, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(w, h, (0..w * h).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn constant_image_at_mean_normalizes_to_zero() {
        let img = GrayImage::filled(10, 6, 0.4).unwrap();
        let stats = PixelStats::new(0.4, 0.2).unwrap();
        let out = prepare_eval(&img, 16, &stats).unwrap();
        assert!(out.pixels().iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn eval_output_is_square_target_size() {
        let img = random_image(768, 512, 1);
        let out = prepare_eval(&img, FULL_SIZE, &PixelStats::IDENTITY).unwrap();
        assert_eq!((out.width(), out.height()), (1024, 1024));
    }

    #[test]
    fn identity_normalization_on_target_sized_input() {
        let img = random_image(32, 32, 2);
        let out = prepare_eval(&img, 32, &PixelStats::IDENTITY).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn half_turn_twice_recovers_input() {
        let img = random_image(24, 24, 3);
        let draw = AugmentDraw {
            quarter_turns: 2,
            ..AugmentDraw::IDENTITY
        };
        let once = augment_unnormalized(&img, draw, 24).unwrap();
        let twice = augment_unnormalized(&once, draw, 24).unwrap();
        assert_eq!(twice, img);
    }

    #[test]
    fn identity_draw_matches_eval() {
        let img = random_image(40, 30, 4);
        let stats = PixelStats::new(0.5, 0.3).unwrap();
        let a = apply_augmentation(&img, AugmentDraw::IDENTITY, 32, &stats).unwrap();
        let b = prepare_eval(&img, 32, &stats).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scaling_is_linear_below_clamp() {
        let img = GrayImage::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let draw = AugmentDraw {
            scale: 1.1,
            ..AugmentDraw::IDENTITY
        };
        let out = augment_unnormalized(&img, draw, 2).unwrap();
        for (o, i) in out.pixels().iter().zip(img.pixels()) {
            assert_eq!(*o, i * 1.1);
        }
        let bright = GrayImage::filled(2, 2, 0.95).unwrap();
        let out = augment_unnormalized(&bright, draw, 2).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn draws_cover_policy() {
        let policy = AugmentPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut turns = [0usize; 4];
        let mut flips = 0;
        for _ in 0..2000 {
            let d = AugmentDraw::sample(&policy, &mut rng);
            assert!((0.9..=1.1).contains(&d.scale));
            turns[d.quarter_turns as usize] += 1;
            flips += usize::from(d.flip);
        }
        assert!(turns.iter().all(|&t| t > 400));
        assert!((800..1200).contains(&flips));
    }

    #[test]
    fn train_preparation_is_deterministic_in_rng() {
        let img = random_image(20, 20, 6);
        let policy = AugmentPolicy {
            target_size: 16,
            ..Default::default()
        };
        let stats = PixelStats::new(0.5, 0.25).unwrap();
        let a = prepare_train(&img, &policy, &stats, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = prepare_train(&img, &policy, &stats, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_policies() {
        let mut p = AugmentPolicy::default();
        p.intensity_scale = (1.2, 1.0);
        assert!(p.validate().is_err());
        p = AugmentPolicy::default();
        p.horizontal_flip_prob = 1.5;
        assert!(p.validate().is_err());
        assert!(PixelStats::new(0.0, 0.0).is_err());
    }

    #[test]
    fn pixel_stats_over_images() {
        let a = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let b = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let s = PixelStats::from_images([&a, &b]).unwrap();
        assert!((s.mean - 0.5).abs() < 1e-12);
        assert!((s.sd - 0.5).abs() < 1e-12);
    }
}
