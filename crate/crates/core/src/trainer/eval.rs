//! Rendering held-out views and scoring them.

use std::collections::BTreeSet;
use std::path::Path;

use crate::dataset::{read_rgb_png, read_thermal_csv, read_thermal_png, Frame, SceneDataset, Split, ThermalMap};
use crate::error::{Error, Result};
use crate::field::FieldModel;
use crate::metrics::{error_map, evaluate_view, write_error_map_png, EvalOptions, MetricsReport, ViewMetrics};
use crate::rendering::{render_view, RenderOptions, RenderedView};
use crate::trainer::config::TrainConfig;
use crate::trainer::render::{rendered_thermal_map, RGB_DIR, THERMAL_DIR, THERMAL_RAW_DIR};

pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";
pub const ERROR_MAP_DIR: &str = "error_maps";

/// Deterministic full-image rendering with the training sampler.
pub fn render_options(cfg: &TrainConfig) -> RenderOptions {
    RenderOptions {
        sampler: cfg.sampler.clone(),
        chunk: cfg.chunk_rays.max(256),
        appearance: None,
        jitter_seed: None,
        threads: cfg.threads,
    }
}

fn frame_rgb(frame: &Frame) -> Vec<f64> {
    frame.rgb.iter().map(|v| *v as f64).collect()
}

/// Scores one rendered view against its scene frame.
pub fn score_view(view: &RenderedView, frame: &Frame, bounds: [f64; 2], opts: &EvalOptions) -> Result<ViewMetrics> {
    let pred = rendered_thermal_map(view)
        .ok_or_else(|| Error::Metric(format!("{}: rendering has no thermal channel", frame.name)))??;
    if !pred.same_shape(&frame.thermal) {
        return Err(Error::Metric(format!(
            "{}: rendering and ground truth differ in size",
            frame.name
        )));
    }
    let gt_rgb = frame_rgb(frame);
    let rgb = view.rgb.as_deref().map(|p| (p, gt_rgb.as_slice()));
    evaluate_view(&frame.stem, rgb, &pred, &frame.thermal, bounds, opts)
}

/// Renders `frames` with `model` and scores them.
pub fn evaluate_model(
    model: &FieldModel<f32>,
    data: &SceneDataset,
    frames: &[usize],
    render: &RenderOptions,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let bounds = data.t_bounds();
    let views = frames
        .iter()
        .map(|i| {
            let f = &data.frames[*i];
            let view = render_view(model, &f.camera, bounds, render)?;
            score_view(&view, f, bounds, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_views(views)
}

/// Result of scoring a directory of renderings.
#[derive(Clone, Debug)]
pub struct DirEvaluation {
    pub report: MetricsReport,
    /// Rendered files with no held-out frame, and held-out frames with no rendering.
    pub unmatched: Vec<String>,
}

fn stems_in(dir: &Path, ext: &str) -> BTreeSet<String> {
    let Ok(rd) = std::fs::read_dir(dir) else {
        return BTreeSet::new();
    };
    rd.filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect()
}

fn read_prediction(dir: &Path, stem: &str, bounds: [f64; 2]) -> Result<ThermalMap> {
    let raw = dir.join(THERMAL_RAW_DIR).join(format!("{stem}.csv"));
    if raw.is_file() {
        read_thermal_csv(&raw)
    } else {
        read_thermal_png(&dir.join(THERMAL_DIR).join(format!("{stem}.png")), bounds[0], bounds[1])
    }
}

/// Pairs the renderings in `rendered` with the held-out frames of `data` by
/// file stem and scores the matched pairs. Full-precision `thermal_raw/*.csv`
/// grids are preferred over the 16-bit images. When `out` is given, writes
/// the report and per-view error maps there.
pub fn evaluate_dir(
    rendered: &Path,
    data: &SceneDataset,
    opts: &EvalOptions,
    out: Option<&Path>,
) -> Result<DirEvaluation> {
    let bounds = data.t_bounds();
    let mut have = stems_in(&rendered.join(THERMAL_RAW_DIR), "csv");
    have.extend(stems_in(&rendered.join(THERMAL_DIR), "png"));
    let test: Vec<&Frame> = data.frames.iter().filter(|f| f.split == Split::Test).collect();
    let wanted: BTreeSet<String> = test.iter().map(|f| f.stem.clone()).collect();
    let mut unmatched: Vec<String> = have
        .difference(&wanted)
        .map(|s| format!("{s} (no ground truth)"))
        .collect();
    unmatched.extend(wanted.difference(&have).map(|s| format!("{s} (not rendered)")));
    for u in &unmatched {
        log::warn!("unmatched: {u}");
    }
    let mut views = Vec::new();
    let mut maps = Vec::new();
    for f in test.iter().filter(|f| have.contains(&f.stem)) {
        let pred = read_prediction(rendered, &f.stem, bounds)?;
        if !pred.same_shape(&f.thermal) {
            return Err(Error::Dataset(format!(
                "{}: rendering and ground truth differ in size",
                f.stem
            )));
        }
        let rgb_path = rendered.join(RGB_DIR).join(format!("{}.png", f.stem));
        let pred_rgb = if rgb_path.is_file() {
            let (w, h, px) = read_rgb_png(&rgb_path)?;
            if (w, h) != (f.thermal.width, f.thermal.height) {
                return Err(Error::Dataset(format!("{}: rgb rendering has the wrong size", f.stem)));
            }
            Some(px.iter().map(|v| *v as f64).collect::<Vec<_>>())
        } else {
            None
        };
        let gt_rgb = frame_rgb(f);
        let rgb = pred_rgb.as_deref().map(|p| (p, gt_rgb.as_slice()));
        views.push(evaluate_view(&f.stem, rgb, &pred, &f.thermal, bounds, opts)?);
        maps.push((f.stem.clone(), error_map(&pred, &f.thermal)?));
    }
    if views.is_empty() {
        return Err(Error::Dataset(format!(
            "no rendering in {} matches a held-out frame",
            rendered.display()
        )));
    }
    let report = MetricsReport::from_views(views)?;
    if let Some(out) = out {
        write_report(&report, out)?;
        let dir = out.join(ERROR_MAP_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let scale = maps.iter().map(|(_, m)| m.max()).fold(0.0, f64::max);
        for (stem, m) in &maps {
            write_error_map_png(m, &dir.join(format!("{stem}.png")), Some(scale))?;
        }
    }
    Ok(DirEvaluation { report, unmatched })
}

pub fn write_report(report: &MetricsReport, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let j = out.join(METRICS_JSON);
    std::fs::write(&j, report.to_json()?).map_err(|e| Error::io(&j, e))?;
    let t = out.join(METRICS_TXT);
    std::fs::write(&t, report.to_table()).map_err(|e| Error::io(&t, e))
}
