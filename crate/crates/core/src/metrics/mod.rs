//! Quality of rendered views against ground truth: temperature MAE (global
//! and over an Otsu region of interest), PSNR, SSIM and error maps.

pub mod error_map;
pub mod image_quality;
pub mod report;
pub mod thermal;

pub use error_map::{colormap, error_map, write_error_map_png, ErrorMap};
pub use image_quality::{psnr, psnr_for_table, ssim, PSNR_TABLE_CAP};
pub use report::{evaluate_view, AggregateMetrics, EvalOptions, MetricsReport, ViewMetrics};
pub use thermal::{mae, mae_roi, otsu_histogram, otsu_split, otsu_threshold, OtsuSplit, RoiResult, RoiSide};
