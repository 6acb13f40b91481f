//! Single-channel floating-point images and the lossless/bilinear
//! geometric operations the pipeline needs.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use sharpscore_nn::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image has zero area ({width}x{height})")]
    Empty { width: usize, height: usize },
    #[error("failed to read image {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Grayscale image with intensities nominally in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty { width, height });
        }
        assert_eq!(pixels.len(), width * height, "pixel buffer does not match dimensions");
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self, ImageError> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Decode an 8- or 16-bit grayscale (or color, converted to luma) file.
    pub fn open(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path).map_err(|source| ImageError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let (pixels, w, h) = match img {
            DynamicImage::ImageLuma8(b) => {
                let (w, h) = b.dimensions();
                (b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(), w, h)
            }
            other => {
                let b = other.into_luma16();
                let (w, h) = b.dimensions();
                (b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(), w, h)
            }
        };
        GrayImage::new(w as usize, h as usize, pixels)
    }

    /// Write as a 16-bit grayscale PNG, clamping to `[0, 1]`.
    pub fn save_png16(&self, path: &Path) -> Result<(), ImageError> {
        let raw: Vec<u16> = self
            .pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
                .expect("buffer sized from dimensions");
        buf.save(path).map_err(|source| ImageError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    /// Bilinear resampling with half-pixel centers; same size is the identity.
    pub fn resize(&self, width: usize, height: usize) -> Result<GrayImage, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty { width, height });
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        Ok(GrayImage {
            width,
            height,
            pixels: resize_bilinear(&self.pixels, self.width, self.height, width, height),
        })
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        let mut out = self.clone();
        for (dst, src) in out.pixels.chunks_mut(self.width).zip(self.pixels.chunks(self.width)) {
            for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                *d = *s;
            }
        }
        out
    }

    /// Rotate counter-clockwise by `turns` quarter turns.
    pub fn rotate_quarter(&self, turns: u8) -> GrayImage {
        let (w, h) = (self.width, self.height);
        match turns % 4 {
            0 => self.clone(),
            2 => GrayImage {
                width: w,
                height: h,
                pixels: self.pixels.iter().rev().copied().collect(),
            },
            t => {
                let mut pixels = vec![0.0; w * h];
                // New image is h wide and w tall.
                for y in 0..h {
                    for x in 0..w {
                        let (nx, ny) = if t == 1 { (y, w - 1 - x) } else { (h - 1 - y, x) };
                        pixels[ny * h + nx] = self.pixels[y * w + x];
                    }
                }
                GrayImage {
                    width: h,
                    height: w,
                    pixels,
                }
            }
        }
    }

    /// `(1, 1, h, w)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, 1, self.height, self.width], self.pixels.clone())
    }

    /// `(1, h, w)` sample for stacking into a batch.
    pub fn to_sample(&self) -> Tensor {
        Tensor::from_vec(&[1, self.height, self.width], self.pixels.clone())
    }
}

/// Bilinear resize of a row-major plane, sampling at half-pixel centers
/// with edge clamping.
pub fn resize_bilinear(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    let axis = |d: usize, s: usize| -> Vec<(usize, usize, f32)> {
        let scale = s as f64 / d as f64;
        (0..d)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (pos.floor() as usize).min(s - 1);
                let i1 = (i0 + 1).min(s - 1);
                (i0, i1, (pos - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = axis(dw, sw);
    let ys = axis(dh, sh);
    let mut out = Vec::with_capacity(dw * dh);
    for &(y0, y1, fy) in &ys {
        let r0 = &src[y0 * sw..(y0 + 1) * sw];
        let r1 = &src[y1 * sw..(y1 + 1) * sw];
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> GrayImage {
        GrayImage::new(w, h, (0..w * h).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn quarter_turns_compose() {
        let img = ramp(3, 2);
        let once = img.rotate_quarter(1);
        assert_eq!((once.width(), once.height()), (2, 3));
        // Top-right corner moves to top-left.
        assert_eq!(once.get(0, 0), img.get(2, 0));
        assert_eq!(img.rotate_quarter(1).rotate_quarter(3), img);
        assert_eq!(img.rotate_quarter(2).rotate_quarter(2), img);
        assert_eq!(
            img.rotate_quarter(1).rotate_quarter(1),
            img.rotate_quarter(2)
        );
        assert_eq!(img.rotate_quarter(3), img.rotate_quarter(2).rotate_quarter(1));
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ramp(4, 3);
        assert_eq!(img.flip_horizontal().get(0, 0), 3.0);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ramp(5, 4);
        assert_eq!(img.resize(5, 4).unwrap(), img);
        let c = GrayImage::filled(3, 7, 0.25).unwrap();
        let r = c.resize(8, 5).unwrap();
        assert!(r.pixels().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn resize_upsample_interpolates() {
        let img = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let r = img.resize(4, 1).unwrap();
        assert_eq!(r.pixels(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn zero_area_rejected() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(ramp(2, 2).resize(0, 2).is_err());
    }

    #[test]
    fn png16_round_trip_is_close() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = GrayImage::new(3, 2, vec![0.0, 0.1, 0.5, 0.75, 0.9, 1.0]).unwrap();
        img.save_png16(&path).unwrap();
        let back = GrayImage::open(&path).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
