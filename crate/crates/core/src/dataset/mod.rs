//! Paired RGB + thermal scenes: manifests, thermal preprocessing, ray
//! batches, synthetic scene generation and the camera precision estimate.

pub mod batch;
pub mod precision;
pub mod scene;
pub mod synth;
pub mod thermal;

pub use batch::{frame_batch, sample_ray_batch, RayBatch};
pub use precision::estimate_precision;
pub use scene::{
    load_scene, load_scene_with, read_rgb_png, Frame, FrameEntry, LoadOptions, SceneDataset, SceneManifest, Split,
};
pub use synth::{generate_synthetic_scene, render_analytic, trace, AnalyticView, SynthSceneSpec};
pub use thermal::{
    clamp_thermal, dequantize, quantize, read_thermal_csv, read_thermal_png, write_thermal_csv, write_thermal_png,
    ThermalMap, SENSOR_RANGE,
};
