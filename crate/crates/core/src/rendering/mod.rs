//! Cameras and rays, sampling along rays, volumetric compositing and full
//! view rendering.

pub mod camera;
pub mod composite;
pub mod pipeline;
pub mod samplers;
pub mod scene_box;

pub use camera::{generate_ray, Camera, Ray};
pub use composite::{composite, render_weights, render_weights_backward, Composite};
pub use pipeline::{
    camera_ray, forward_rays, render_view, BatchForward, RadianceSource, RayInput, RenderOptions, RenderedView,
    SampleBatch, SamplerConfig,
};
pub use samplers::{resample_from_weights, sample_proposal, sample_stratified, RaySamples, Spacing};
pub use scene_box::{contract_to_unit_cube, Aabb};
