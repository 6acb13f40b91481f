//! Grad-CAM over the final backbone activation map, and heatmap overlays.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sharpscore_nn::{Mode, Tensor};
use thiserror::Error;

use crate::imaging::{resize_bilinear, GrayImage, ImageError};
use crate::models::{HeadKind, ModelError, Network};
use crate::training::argmax;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("class {class} is outside the head's {width} outputs")]
    ClassOutOfRange { class: usize, width: usize },
    #[error("heatmap is {heat:?} but image is {image:?}")]
    Size { heat: (usize, usize), image: (usize, usize) },
    #[error("overlay alpha must lie in [0, 1], got {0}")]
    Alpha(f32),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Which output Grad-CAM differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamTarget {
    /// The single regression output.
    Regression,
    Class(usize),
    /// The argmax class for classification heads, the output otherwise.
    Predicted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Rectified map at feature-map resolution, before normalization.
    pub raw: Vec<f32>,
    pub raw_width: usize,
    pub raw_height: usize,
    /// Upsampled to input resolution and divided by its maximum when positive.
    pub values: Vec<f32>,
    pub width: usize,
    pub height: usize,
    /// Output index that was differentiated.
    pub output: usize,
}

impl Heatmap {
    pub fn max(&self) -> f32 {
        self.values.iter().cloned().fold(0.0, f32::max)
    }
}

/// Grad-CAM for every image of a prepared `(n, 1, h, w)` batch.
pub fn grad_cam(net: &mut Network, batch: &Tensor, target: CamTarget) -> Result<Vec<Heatmap>, ExplainError> {
    let width = net.head_kind().width();
    if let CamTarget::Class(class) = target {
        if class >= width {
            return Err(ExplainError::ClassOutOfRange { class, width });
        }
    }
    let (n, _, in_h, in_w) = batch.dims4();
    let features = net.features(batch, Mode::Eval)?;
    let out = net.head_forward(&features);
    let outputs: Vec<usize> = (0..n)
        .map(|i| match (target, net.head_kind()) {
            (CamTarget::Class(k), _) => k,
            (CamTarget::Predicted, HeadKind::Classification) => argmax(out.sample(i)),
            _ => 0,
        })
        .collect();
    let mut grad = Tensor::zeros(out.shape());
    for (i, &k) in outputs.iter().enumerate() {
        grad.data_mut()[i * width + k] = 1.0;
    }
    let dfeat = net.head_backward(&grad);
    net.zero_grad();

    let (_, c, h, w) = features.dims4();
    let plane = h * w;
    let mut maps = Vec::with_capacity(n);
    for (i, &output) in outputs.iter().enumerate() {
        let f = features.sample(i);
        let g = dfeat.sample(i);
        let mut raw = vec![0.0f32; plane];
        for ch in 0..c {
            let gp = &g[ch * plane..(ch + 1) * plane];
            let weight = gp.iter().sum::<f32>() / plane as f32;
            if weight == 0.0 {
                continue;
            }
            for (r, &v) in raw.iter_mut().zip(&f[ch * plane..(ch + 1) * plane]) {
                *r += weight * v;
            }
        }
        raw.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut values = resize_bilinear(&raw, w, h, in_w, in_h);
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        let max = values.iter().cloned().fold(0.0f32, f32::max);
        if max > 0.0 {
            values.iter_mut().for_each(|v| *v /= max);
        }
        maps.push(Heatmap {
            raw,
            raw_width: w,
            raw_height: h,
            values,
            width: in_w,
            height: in_h,
            output,
        });
    }
    Ok(maps)
}

/// Jet colormap for `t` in `[0, 1]`.
pub fn jet(t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0);
    let ramp = |x: f32| (1.5 - (4.0 * t - x).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Blend `alpha * heat` of the colormapped heatmap over the radiograph;
/// zero heat leaves the grayscale pixel untouched.
pub fn overlay_image(image: &GrayImage, heatmap: &Heatmap, alpha: f32) -> Result<RgbImage, ExplainError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ExplainError::Alpha(alpha));
    }
    if (heatmap.width, heatmap.height) != (image.width(), image.height()) {
        return Err(ExplainError::Size {
            heat: (heatmap.width, heatmap.height),
            image: (image.width(), image.height()),
        });
    }
    let mut out = RgbImage::new(image.width() as u32, image.height() as u32);
    for (i, (px, &h)) in image.pixels().iter().zip(&heatmap.values).enumerate() {
        let gray = px.clamp(0.0, 1.0);
        let a = alpha * h;
        let color = jet(h);
        let mix = |c: f32| (((1.0 - a) * gray + a * c) * 255.0).round() as u8;
        let rgb = Rgb([mix(color[0]), mix(color[1]), mix(color[2])]);
        out.put_pixel((i % image.width()) as u32, (i / image.width()) as u32, rgb);
    }
    Ok(out)
}

pub fn render_overlay(image: &GrayImage, heatmap: &Heatmap, alpha: f32, out_path: &Path) -> Result<(), ExplainError> {
    let img = overlay_image(image, heatmap, alpha)?;
    img.save(out_path).map_err(|source| ImageError::Write {
        path: out_path.display().to_string(),
        source,
    })?;
    Ok(())
}
