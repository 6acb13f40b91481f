//! Plain raster figures: predicted-vs-true scatter and confusion matrix.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::imaging::ImageError;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);
const POINT: Rgb<u8> = Rgb([31, 119, 180]);
const IDENTITY: Rgb<u8> = Rgb([214, 39, 40]);

fn save(img: &RgbImage, path: &Path) -> Result<(), ImageError> {
    img.save(path).map_err(|source| ImageError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Scatter of predicted (y axis) against true (x axis) scores over
/// `[lo, hi]` on both axes, with the identity line and grid lines every
/// `tick` units.
pub fn scatter_plot(truth: &[f64], predicted: &[f64], lo: f64, hi: f64, tick: f64, path: &Path) -> Result<(), ImageError> {
    const SIZE: u32 = 600;
    const MARGIN: i64 = 50;
    let mut img = RgbImage::from_pixel(SIZE, SIZE, WHITE);
    let span = (SIZE as i64 - 2 * MARGIN) as f64;
    let to_px = |v: f64| (v.clamp(lo, hi) - lo) / (hi - lo) * span;
    let origin = SIZE as i64 - MARGIN;
    let mut t = lo;
    while t <= hi + 1e-9 {
        let p = to_px(t).round() as i64;
        for k in 0..=span as i64 {
            put(&mut img, MARGIN + p, origin - k, GRID);
            put(&mut img, MARGIN + k, origin - p, GRID);
        }
        t += tick;
    }
    for k in 0..=span as i64 {
        put(&mut img, MARGIN + k, origin - k, IDENTITY);
        put(&mut img, MARGIN + k, origin, AXIS);
        put(&mut img, MARGIN, origin - k, AXIS);
    }
    for (&x, &y) in truth.iter().zip(predicted) {
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        let (cx, cy) = (MARGIN + to_px(x).round() as i64, origin - to_px(y).round() as i64);
        for dy in -2..=2i64 {
            for dx in -2..=2i64 {
                if dx * dx + dy * dy <= 5 {
                    put(&mut img, cx + dx, cy + dy, POINT);
                }
            }
        }
    }
    save(&img, path)
}

/// Confusion matrix heat grid (rows true, columns predicted), shaded by
/// row-normalized frequency.
pub fn confusion_plot(confusion: &[Vec<u64>], path: &Path) -> Result<(), ImageError> {
    const CELL: u32 = 48;
    const MARGIN: u32 = 24;
    let k = confusion.len() as u32;
    let side = 2 * MARGIN + k * CELL;
    let mut img = RgbImage::from_pixel(side, side, WHITE);
    for (r, row) in confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (c, &v) in row.iter().enumerate() {
            let f = if total > 0 { v as f64 / total as f64 } else { 0.0 };
            let shade = Rgb([
                (255.0 - f * 247.0) as u8,
                (255.0 - f * 207.0) as u8,
                (255.0 - f * 148.0) as u8,
            ]);
            for y in 0..CELL {
                for x in 0..CELL {
                    let edge = x == 0 || y == 0;
                    let px = if edge { AXIS } else { shade };
                    img.put_pixel(MARGIN + c as u32 * CELL + x, MARGIN + r as u32 * CELL + y, px);
                }
            }
        }
    }
    for t in 0..=k * CELL {
        img.put_pixel(MARGIN + t, MARGIN + k * CELL, AXIS);
        img.put_pixel(MARGIN + k * CELL, MARGIN + t, AXIS);
    }
    save(&img, path)
}
