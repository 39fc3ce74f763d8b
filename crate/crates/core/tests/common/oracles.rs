//! Independent reference implementations shared by the per-area tests and
//! the acceptance suite.

use rand::Rng;
use thermonerf::dataset::ThermalMap;
use thermonerf::metrics::{mae_roi, otsu_histogram, RoiSide};

/// Between-class variance of a split at `k`, from fresh sums.
fn between_class(hist: &[f64], k: usize) -> Option<f64> {
    let w0: f64 = hist[..k].iter().sum();
    let w1: f64 = hist[k..].iter().sum();
    if w0 == 0.0 || w1 == 0.0 {
        return None;
    }
    let m0 = hist[..k].iter().enumerate().map(|(i, c)| i as f64 * c).sum::<f64>() / w0;
    let m1 = hist[k..]
        .iter()
        .enumerate()
        .map(|(i, c)| (i + k) as f64 * c)
        .sum::<f64>()
        / w1;
    let total = w0 + w1;
    Some((w0 / total) * (w1 / total) * (m0 - m1).powi(2))
}

/// Exhaustive scan over every split point.
fn otsu_oracle(hist: &[f64]) -> Option<(usize, f64)> {
    (1..hist.len())
        .filter_map(|k| between_class(hist, k).map(|v| (k, v)))
        .fold(None, |best: Option<(usize, f64)>, (k, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((k, v)),
        })
}

pub fn otsu_matches_exhaustive_scan(cases: usize, seed: u64) -> (bool, f64) {
    let mut r = super::rng(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let bins = r.random_range(2..300);
        let hist: Vec<f64> = (0..bins)
            .map(|i| {
                // Bimodal plus noise, with empty stretches in some cases.
                let x = i as f64 / bins as f64;
                let bump = 200.0 * (-((x - 0.25) / 0.07).powi(2)).exp() + 120.0 * (-((x - 0.7) / 0.1).powi(2)).exp();
                let c = (bump + r.random_range(0.0..30.0)).floor();
                if case % 3 == 0 && r.random_bool(0.3) {
                    0.0
                } else {
                    c
                }
            })
            .collect();
        let got = otsu_histogram(&hist);
        let want = otsu_oracle(&hist);
        match (got, want) {
            (Some(k), Some((_, v))) => {
                let vk = between_class(&hist, k).unwrap();
                worst = worst.max((v - vk) / v.max(1e-300));
            }
            (None, None) => {}
            _ => return (false, f64::INFINITY),
        }
    }
    (worst <= 1e-12, worst)
}

/// Direct SSIM: a full 2-D Gaussian window evaluated at every valid
/// position, without separable filtering.
pub fn ssim_direct(x: &[f64], y: &[f64], w: usize, h: usize, range: f64) -> f64 {
    let win = 11;
    let sigma: f64 = 1.5;
    let c = 5.0;
    let mut kern = vec![0.0; win * win];
    for a in 0..win {
        for b in 0..win {
            let d2 = (a as f64 - c).powi(2) + (b as f64 - c).powi(2);
            kern[a * win + b] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let ks: f64 = kern.iter().sum();
    kern.iter_mut().for_each(|k| *k /= ks);
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for oy in 0..=h - win {
        for ox in 0..=w - win {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in 0..win {
                for b in 0..win {
                    let k = kern[a * win + b];
                    let (u, v) = (x[(oy + a) * w + ox + b], y[(oy + a) * w + ox + b]);
                    mx += k * u;
                    my += k * v;
                    sxx += k * u * u;
                    syy += k * v * v;
                    sxy += k * u * v;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Hot disk on a cool background with gentle ripples on both.
pub fn disk_scene(seed: u64) -> (ThermalMap, ThermalMap, Vec<bool>) {
    let mut r = super::rng(seed);
    let (w, h) = (48usize, 40usize);
    let mut gt = Vec::with_capacity(w * h);
    let mut disk = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            let (x, y) = (i as f64 + 0.5 - 20.0, j as f64 + 0.5 - 22.0);
            let inside = x * x + y * y < 11.0f64.powi(2);
            let ripple = 0.8 * (0.3 * i as f64).sin() * (0.2 * j as f64).cos();
            gt.push(if inside { 60.0 + ripple } else { 21.0 + ripple });
            disk.push(inside);
        }
    }
    let pred: Vec<f64> = gt.iter().map(|t| t + r.random_range(-3.0..3.0)).collect();
    (
        ThermalMap::new(w as u32, h as u32, pred).unwrap(),
        ThermalMap::new(w as u32, h as u32, gt).unwrap(),
        disk,
    )
}

pub fn mae_roi_matches_mask(seed: u64) -> f64 {
    let (pred, gt, disk) = disk_scene(seed);
    let roi = mae_roi(&pred, &gt, RoiSide::Auto).unwrap();
    assert_eq!(roi.side, RoiSide::Above);
    let (s, n) = (0..gt.len())
        .filter(|p| disk[*p])
        .fold((0.0, 0), |(s, n), p| (s + (pred.temps[p] - gt.temps[p]).abs(), n + 1));
    (roi.mae_roi - s / n as f64).abs()
}
