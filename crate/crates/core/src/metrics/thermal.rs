//! Temperature error metrics and Otsu region-of-interest selection.

use serde::{Deserialize, Serialize};

use crate::dataset::ThermalMap;
use crate::error::{Error, Result};

fn check_pair(pred: &ThermalMap, gt: &ThermalMap) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::Metric(format!(
            "shape mismatch: prediction {}x{}, ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    Ok(())
}

fn masked_mae(pred: &ThermalMap, gt: &ThermalMap, keep: impl Fn(usize) -> bool) -> Result<f64> {
    check_pair(pred, gt)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in 0..gt.len() {
        if pred.valid[p] && gt.valid[p] && keep(p) {
            sum += (pred.temps[p] - gt.temps[p]).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Metric("no jointly valid pixels".into()));
    }
    Ok(sum / n as f64)
}

/// Mean absolute error over pixels valid in both maps, in degrees.
pub fn mae(pred: &ThermalMap, gt: &ThermalMap) -> Result<f64> {
    masked_mae(pred, gt, |_| true)
}

/// Histogram-based two-class split of the valid pixels of a map.
#[derive(Clone, Debug, PartialEq)]
pub struct OtsuSplit {
    /// Degrees; pixels at or above it form the upper class.
    pub threshold: f64,
    /// Per pixel: `Some(true)` upper class, `Some(false)` lower, `None` invalid.
    pub upper: Vec<Option<bool>>,
}

/// Index `k` maximising the between-class variance when bins `< k` form
/// the lower class. Bin centres are taken as `0, 1, 2, ..`, which leaves the
/// maximiser unchanged for any evenly spaced binning. `None` if every
/// nonempty bin is the same one.
pub fn otsu_histogram(hist: &[f64]) -> Option<usize> {
    let total: f64 = hist.iter().sum();
    let grand: f64 = hist.iter().enumerate().map(|(b, c)| c * b as f64).sum();
    let mut best = None;
    let mut best_var = f64::NEG_INFINITY;
    let mut w0 = 0.0;
    let mut s0 = 0.0;
    for k in 1..hist.len() {
        w0 += hist[k - 1];
        s0 += hist[k - 1] * (k - 1) as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = s0 / w0;
        let mu1 = (grand - s0) / w1;
        let between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if between > best_var {
            best_var = between;
            best = Some(k);
        }
    }
    best
}

pub fn otsu_split(gt: &ThermalMap, bins: usize) -> Result<OtsuSplit> {
    if bins < 2 {
        return Err(Error::Metric("Otsu needs at least 2 bins".into()));
    }
    let values = || gt.temps.iter().zip(&gt.valid).filter(|(_, v)| **v).map(|(t, _)| *t);
    let lo = values().fold(f64::INFINITY, f64::min);
    let hi = values().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Metric(
            "thermal map is constant; no region of interest is separable".into(),
        ));
    }
    let width = (hi - lo) / bins as f64;
    let bin_of = |t: f64| (((t - lo) / width).floor() as usize).min(bins - 1);
    let mut hist = vec![0.0f64; bins];
    for t in values() {
        hist[bin_of(t)] += 1.0;
    }
    let best_k = otsu_histogram(&hist).unwrap_or(0);
    let upper = gt
        .temps
        .iter()
        .zip(&gt.valid)
        .map(|(t, v)| v.then(|| bin_of(*t) >= best_k))
        .collect();
    Ok(OtsuSplit {
        threshold: lo + best_k as f64 * width,
        upper,
    })
}

/// Otsu threshold in degrees over the valid pixels of `gt`.
pub fn otsu_threshold(gt: &ThermalMap, bins: usize) -> Result<f64> {
    Ok(otsu_split(gt, bins)?.threshold)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RoiSide {
    /// The class deviating more from the scene median.
    #[default]
    Auto,
    Above,
    Below,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiResult {
    pub mae_roi: f64,
    pub threshold: f64,
    /// Resolved side (`above` or `below`).
    pub side: RoiSide,
    pub roi_pixels: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// MAE restricted to the Otsu class of `gt` selected by `side`.
pub fn mae_roi(pred: &ThermalMap, gt: &ThermalMap, side: RoiSide) -> Result<RoiResult> {
    check_pair(pred, gt)?;
    let split = otsu_split(gt, 256)?;
    let side = match side {
        RoiSide::Auto => {
            let valid: Vec<f64> = (0..gt.len()).filter(|p| gt.valid[*p]).map(|p| gt.temps[p]).collect();
            let med = median(valid);
            let mut dev = [0.0f64; 2];
            let mut cnt = [0usize; 2];
            for (p, u) in split.upper.iter().enumerate() {
                if let Some(u) = u {
                    dev[*u as usize] += (gt.temps[p] - med).abs();
                    cnt[*u as usize] += 1;
                }
            }
            let mean = |k: usize| dev[k] / cnt[k].max(1) as f64;
            if mean(0) > mean(1) {
                RoiSide::Below
            } else {
                RoiSide::Above
            }
        }
        s => s,
    };
    let want = side == RoiSide::Above;
    let in_roi = |p: usize| split.upper[p] == Some(want);
    let roi_pixels = (0..gt.len()).filter(|p| in_roi(*p) && pred.valid[*p]).count();
    if roi_pixels == 0 {
        return Err(Error::Metric("region of interest is empty".into()));
    }
    Ok(RoiResult {
        mae_roi: masked_mae(pred, gt, in_roi)?,
        threshold: split.threshold,
        side,
        roi_pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: Vec<f64>) -> ThermalMap {
        let n = v.len() as u32;
        ThermalMap::new(n, 1, v).unwrap()
    }

    #[test]
    fn mae_examples() {
        let gt = map(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mae(&gt, &gt).unwrap(), 0.0);
        let off = map(gt.temps.iter().map(|t| t + 1.5).collect());
        assert_eq!(mae(&off, &gt).unwrap(), 1.5);
        let mut none = gt.clone();
        none.valid = vec![false; 4];
        assert!(matches!(mae(&none, &gt), Err(Error::Metric(_))));
    }

    #[test]
    fn bimodal_threshold_splits_classes() {
        let gt = map([vec![0.0; 50], vec![10.0; 50]].concat());
        let s = otsu_split(&gt, 256).unwrap();
        assert!(s.threshold > 0.0 && s.threshold < 10.0);
        for (t, u) in gt.temps.iter().zip(&s.upper) {
            assert_eq!(u.unwrap(), *t == 10.0);
        }
    }

    #[test]
    fn outlier_keeps_classes_nonempty() {
        let mut v = vec![20.0; 99];
        v.push(95.0);
        let s = otsu_split(&map(v), 256).unwrap();
        assert!(s.threshold.is_finite());
        let up = s.upper.iter().filter(|u| **u == Some(true)).count();
        assert!(up > 0 && up < 100);
    }

    #[test]
    fn constant_map_is_metric_error() {
        assert!(matches!(otsu_threshold(&map(vec![3.0; 9]), 256), Err(Error::Metric(_))));
    }

    #[test]
    fn roi_ignores_errors_outside() {
        // Small hot region on a cool background.
        let gt = map([vec![10.0; 70], vec![50.0; 30]].concat());
        let mut pred = gt.clone();
        pred.temps[0] += 4.0;
        let r = mae_roi(&pred, &gt, RoiSide::Auto).unwrap();
        assert_eq!(r.side, RoiSide::Above);
        assert_eq!(r.mae_roi, 0.0);
        assert_eq!(r.roi_pixels, 30);
        assert!(mae(&pred, &gt).unwrap() > 0.0);
        assert_eq!(mae_roi(&pred, &gt, RoiSide::Below).unwrap().mae_roi, 4.0 / 70.0);
    }
}
