//! Per-pixel absolute temperature error and its color-mapped rendering.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::dataset::ThermalMap;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub width: u32,
    pub height: u32,
    /// `|pred - gt|` in degrees; 0 where either pixel is invalid.
    pub abs: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ErrorMap {
    pub fn max(&self) -> f64 {
        self.abs
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(e, _)| *e)
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        let (s, n) = self
            .abs
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .fold((0.0, 0usize), |(s, n), (e, _)| (s + e, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

pub fn error_map(pred: &ThermalMap, gt: &ThermalMap) -> Result<ErrorMap> {
    if !pred.same_shape(gt) {
        return Err(Error::Metric("error map inputs differ in shape".into()));
    }
    let valid: Vec<bool> = pred.valid.iter().zip(&gt.valid).map(|(a, b)| *a && *b).collect();
    let abs = pred
        .temps
        .iter()
        .zip(&gt.temps)
        .zip(&valid)
        .map(|((p, g), v)| if *v { (p - g).abs() } else { 0.0 })
        .collect();
    Ok(ErrorMap {
        width: pred.width,
        height: pred.height,
        abs,
        valid,
    })
}

// Anchors of a dark-to-bright perceptual ramp (black, purple, orange, pale yellow).
const RAMP: [[f64; 3]; 5] = [
    [0.0, 0.0, 0.02],
    [0.34, 0.06, 0.43],
    [0.73, 0.21, 0.33],
    [0.98, 0.55, 0.04],
    [0.99, 1.0, 0.64],
];

pub fn colormap(x: f64) -> [u8; 3] {
    let x = if x.is_finite() { x.clamp(0.0, 1.0) } else { 1.0 };
    let pos = x * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - i as f64;
    [0, 1, 2].map(|k| ((RAMP[i][k] + f * (RAMP[i + 1][k] - RAMP[i][k])) * 255.0).round() as u8)
}

#[derive(Serialize)]
struct ScaleInfo {
    min_celsius: f64,
    max_celsius: f64,
}

const BAR_GAP: u32 = 4;
const BAR_WIDTH: u32 = 6;

/// Writes the color-mapped error with a vertical scale bar on its right
/// (bottom = 0, top = `scale_max`), plus `<stem>.scale.json` with the range.
pub fn write_error_map_png(map: &ErrorMap, path: &Path, scale_max: Option<f64>) -> Result<()> {
    let top = scale_max.unwrap_or_else(|| map.max()).max(1e-12);
    let (w, h) = (map.width, map.height);
    let mut img = RgbImage::from_pixel(w + BAR_GAP + BAR_WIDTH, h, Rgb([255, 255, 255]));
    for y in 0..h {
        for x in 0..w {
            let p = (y * w + x) as usize;
            let c = if map.valid[p] {
                colormap(map.abs[p] / top)
            } else {
                [128, 128, 128]
            };
            img.put_pixel(x, y, Rgb(c));
        }
        let level = if h > 1 { 1.0 - y as f64 / (h - 1) as f64 } else { 1.0 };
        for x in 0..BAR_WIDTH {
            img.put_pixel(w + BAR_GAP + x, y, Rgb(colormap(level)));
        }
    }
    img.save(path)?;
    let info = ScaleInfo {
        min_celsius: 0.0,
        max_celsius: top,
    };
    let side = path.with_extension("scale.json");
    std::fs::write(&side, serde_json::to_string_pretty(&info)?).map_err(|e| Error::io(&side, e))
}
