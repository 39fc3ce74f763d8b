//! PSNR and single-scale SSIM.

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Value shown in tables for identical images.
pub const PSNR_TABLE_CAP: f64 = 99.0;

/// `10 log10(range^2 / MSE)`; identical inputs give `+inf`.
pub fn psnr(pred: &[f64], gt: &[f64], data_range: f64) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Metric("psnr inputs must be non-empty and equally sized".into()));
    }
    if !(data_range > 0.0) {
        return Err(Error::Metric(format!(
            "psnr data range must be positive, got {data_range}"
        )));
    }
    let mse = pred.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

pub fn psnr_for_table(v: f64) -> f64 {
    v.min(PSNR_TABLE_CAP)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-mode Gaussian filtering of one channel.
fn blur(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_channel(x: &[f64], y: &[f64], w: usize, h: usize, data_range: f64) -> f64 {
    let k = gaussian_kernel();
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, my) = (blur(x, w, h, &k), blur(y, w, h, &k));
    let (mxx, myy, mxy) = (blur(&xx, w, h, &k), blur(&yy, w, h, &k), blur(&xy, w, h, &k));
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let vx = mxx[i] - mx[i] * mx[i];
        let vy = myy[i] - my[i] * my[i];
        let cov = mxy[i] - mx[i] * my[i];
        let num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
        let den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
        total += num / den;
    }
    total / n as f64
}

/// SSIM of two interleaved `width x height x channels` images, averaged over
/// channels.
pub fn ssim(pred: &[f64], gt: &[f64], width: usize, height: usize, channels: usize, data_range: f64) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() != width * height * channels || channels == 0 {
        return Err(Error::Metric("ssim inputs do not match the given shape".into()));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::Metric(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {width}x{height}"
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::Metric("ssim data range must be positive".into()));
    }
    let mut acc = 0.0;
    for c in 0..channels {
        let x: Vec<f64> = pred.iter().skip(c).step_by(channels).copied().collect();
        let y: Vec<f64> = gt.iter().skip(c).step_by(channels).copied().collect();
        acc += ssim_channel(&x, &y, width, height, data_range);
    }
    Ok(acc / channels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = [0.1, 0.2, 0.3];
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(psnr_for_table(f64::INFINITY), 99.0);
        assert!(psnr(&[1.0, 1.0], &[0.0, 0.0], 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let (w, h) = (16, 12);
        let img: Vec<f64> = (0..w * h).map(|i| ((i % w) / 4 + (i / w) / 4) as f64 % 2.0).collect();
        assert!((ssim(&img, &img, w, h, 1, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let inv: Vec<f64> = img.iter().map(|v| 1.0 - v).collect();
        assert!(ssim(&img, &inv, w, h, 1, 1.0).unwrap() < 0.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        assert!(matches!(
            ssim(&[0.0; 100], &[0.0; 100], 10, 10, 1, 1.0),
            Err(Error::Metric(_))
        ));
    }
}
