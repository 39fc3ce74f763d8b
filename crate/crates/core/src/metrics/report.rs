//! Per-view metric bundles and the aggregated report.

use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::ThermalMap;
use crate::error::{Error, Result};
use crate::metrics::image_quality::{psnr, psnr_for_table, ssim};
use crate::metrics::thermal::{mae, mae_roi, RoiSide};

/// f64 that may be `+inf`, stored in JSON as the string `"inf"`.
mod maybe_inf {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad number {s:?}"))),
        }
    }
}

mod maybe_inf_opt {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(v) => maybe_inf::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct W(#[serde(with = "maybe_inf")] f64);
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub name: String,
    pub mae: f64,
    pub mae_roi: f64,
    pub roi_threshold: f64,
    pub roi_side: RoiSide,
    #[serde(with = "maybe_inf_opt", default)]
    pub psnr_rgb: Option<f64>,
    pub ssim_rgb: Option<f64>,
    #[serde(with = "maybe_inf")]
    pub psnr_th: f64,
    pub ssim_th: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mae: f64,
    pub mae_roi: f64,
    #[serde(with = "maybe_inf_opt", default)]
    pub psnr_rgb: Option<f64>,
    pub ssim_rgb: Option<f64>,
    #[serde(with = "maybe_inf")]
    pub psnr_th: f64,
    pub ssim_th: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_view: Vec<ViewMetrics>,
    pub aggregate: AggregateMetrics,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    pub roi_side: RoiSide,
    /// Exclude invalid ground-truth pixels (otherwise every pixel counts).
    pub exclude_invalid: bool,
}

/// Metrics of one view. RGB is interleaved in [0,1]; thermal maps are in
/// degrees and are normalised by `bounds` for PSNR and SSIM.
pub fn evaluate_view(
    name: &str,
    rgb: Option<(&[f64], &[f64])>,
    pred_th: &ThermalMap,
    gt_th: &ThermalMap,
    bounds: [f64; 2],
    opts: &EvalOptions,
) -> Result<ViewMetrics> {
    let mut gt = gt_th.clone();
    if !opts.exclude_invalid {
        gt.valid.iter_mut().for_each(|v| *v = true);
    }
    let (w, h) = (gt.width as usize, gt.height as usize);
    let roi = mae_roi(pred_th, &gt, opts.roi_side)?;
    let range = bounds[1] - bounds[0];
    let norm = |m: &ThermalMap| m.temps.iter().map(|t| (t - bounds[0]) / range).collect::<Vec<_>>();
    let (pn, gn) = (norm(pred_th), norm(&gt));
    let (psnr_rgb, ssim_rgb) = match rgb {
        Some((p, g)) => (Some(psnr(p, g, 1.0)?), Some(ssim(p, g, w, h, 3, 1.0)?)),
        None => (None, None),
    };
    Ok(ViewMetrics {
        name: name.to_owned(),
        mae: mae(pred_th, &gt)?,
        mae_roi: roi.mae_roi,
        roi_threshold: roi.threshold,
        roi_side: roi.side,
        psnr_rgb,
        ssim_rgb,
        psnr_th: psnr(&pn, &gn, 1.0)?,
        ssim_th: ssim(&pn, &gn, w, h, 1, 1.0)?,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

impl MetricsReport {
    pub fn from_views(per_view: Vec<ViewMetrics>) -> Result<Self> {
        if per_view.is_empty() {
            return Err(Error::Metric("no views to aggregate".into()));
        }
        let has_rgb = per_view.iter().all(|v| v.psnr_rgb.is_some());
        let aggregate = AggregateMetrics {
            mae: mean(per_view.iter().map(|v| v.mae)),
            mae_roi: mean(per_view.iter().map(|v| v.mae_roi)),
            psnr_rgb: has_rgb.then(|| mean(per_view.iter().map(|v| v.psnr_rgb.unwrap()))),
            ssim_rgb: has_rgb.then(|| mean(per_view.iter().map(|v| v.ssim_rgb.unwrap()))),
            psnr_th: mean(per_view.iter().map(|v| v.psnr_th)),
            ssim_th: mean(per_view.iter().map(|v| v.ssim_th)),
        };
        Ok(Self { per_view, aggregate })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width table, one row per view plus the mean; PSNR capped for display.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_owned(), |v| format!("{v:.prec$}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<20} {:>8} {:>8} {:>9} {:>8} {:>9} {:>8}",
            "view", "MAE", "MAE_roi", "PSNR_rgb", "SSIM_rgb", "PSNR_th", "SSIM_th"
        );
        let mut row = |name: &str, mae: f64, roi: f64, pr: Option<f64>, sr: Option<f64>, pt: f64, st: f64| {
            let _ = writeln!(
                s,
                "{:<20} {:>8.3} {:>8.3} {:>9} {:>8} {:>9.2} {:>8.4}",
                name,
                mae,
                roi,
                opt(pr.map(psnr_for_table), 2),
                opt(sr, 4),
                psnr_for_table(pt),
                st
            );
        };
        for v in &self.per_view {
            row(&v.name, v.mae, v.mae_roi, v.psnr_rgb, v.ssim_rgb, v.psnr_th, v.ssim_th);
        }
        let a = &self.aggregate;
        row("mean", a.mae, a.mae_roi, a.psnr_rgb, a.ssim_rgb, a.psnr_th, a.ssim_th);
        s
    }
}
