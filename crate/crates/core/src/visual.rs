//! Color mapping and PNG output shared by the report and Grad-CAM renders.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Piecewise-linear control points `(x, value)` of the jet colormap.
const JET_RED: [(f64, f64); 5] = [(0.0, 0.0), (0.35, 0.0), (0.66, 1.0), (0.89, 1.0), (1.0, 0.5)];
const JET_GREEN: [(f64, f64); 6] = [(0.0, 0.0), (0.125, 0.0), (0.375, 1.0), (0.64, 1.0), (0.91, 0.0), (1.0, 0.0)];
const JET_BLUE: [(f64, f64); 5] = [(0.0, 0.5), (0.11, 1.0), (0.34, 1.0), (0.65, 0.0), (1.0, 0.0)];

/// Entries in the quantized lookup table.
const JET_LEVELS: usize = 256;

fn interp(points: &[(f64, f64)], x: f64) -> f64 {
    for pair in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if x <= x1 {
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    points[points.len() - 1].1
}

/// Jet color of `x` in `[0, 1]` (clamped), quantized to 256 levels.
pub fn jet(x: f64) -> [u8; 3] {
    let level = ((x.clamp(0.0, 1.0) * JET_LEVELS as f64) as usize).min(JET_LEVELS - 1);
    let t = level as f64 / (JET_LEVELS - 1) as f64;
    let channel = |points: &[(f64, f64)]| (interp(points, t) * 255.0).round() as u8;
    [channel(&JET_RED), channel(&JET_GREEN), channel(&JET_BLUE)]
}

/// Fixed class palette: jet sampled evenly over the class indices.
pub fn class_color(class: u8, num_classes: usize) -> [u8; 3] {
    let denom = num_classes.saturating_sub(1).max(1) as f64;
    jet(class as f64 / denom)
}

pub fn grayscale(image: ArrayView2<f32>) -> RgbImage {
    let (h, w) = image.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = (image[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    })
}

pub fn label_image(mask: ArrayView2<u8>, num_classes: usize) -> RgbImage {
    let (h, w) = mask.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| Rgb(class_color(mask[[y as usize, x as usize]], num_classes)))
}

pub fn save_png(image: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Render(format!("{}: {e}", path.display())))
}
