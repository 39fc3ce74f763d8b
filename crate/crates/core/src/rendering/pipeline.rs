//! Batched ray rendering on the tape: proposal rounds, final field
//! evaluation and compositing of color and temperature with shared weights.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::field::{FieldModel, FieldVars};
use crate::real::Real;
use crate::rendering::camera::{generate_ray, Camera, Ray, Vec3};
use crate::rendering::composite::{record_accumulation, record_blend, record_segment_sum, record_weights};
use crate::rendering::samplers::{reborrow, resample_from_weights, sample_stratified, RaySamples};
use crate::rendering::scene_box::Aabb;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Bins per proposal round; its length is the number of rounds.
    pub proposal_samples: Vec<usize>,
    pub final_samples: usize,
    /// Uniform mixture weight used when resampling from proposal weights.
    pub eps_pdf: f64,
    /// Closest distance from the camera at which sampling starts.
    pub near_plane: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            proposal_samples: vec![128],
            final_samples: 48,
            eps_pdf: 0.01,
            near_plane: 0.05,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.final_samples < 2 || self.proposal_samples.iter().any(|n| *n < 2) {
            return Err(Error::Config("every sampling pass needs at least 2 bins".into()));
        }
        if !(0.0..1.0).contains(&self.eps_pdf) {
            return Err(Error::Config(format!("eps_pdf must be in [0,1), got {}", self.eps_pdf)));
        }
        if !(self.near_plane > 0.0) {
            return Err(Error::Config("near_plane must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that can be rendered: the learned field, or a hand-written
/// analytic scene in tests.
pub trait RadianceSource<T: Real>: Sync {
    fn scene_box(&self) -> &Aabb;

    fn proposal_rounds(&self) -> usize;

    /// Densities (`N x 1`) of proposal network `round` at world points.
    fn proposal_density(&self, tape: &mut Tape<T>, round: usize, points: &[Vec3]) -> Result<Var>;

    /// Field outputs at world points.
    fn evaluate(
        &self,
        tape: &mut Tape<T>,
        points: &[Vec3],
        dirs: &[Vec3],
        appearance: &[Option<usize>],
    ) -> Result<FieldVars>;

    /// Background color (`1 x 3`) and normalised temperature (`1 x 1`).
    fn background(&self, tape: &mut Tape<T>) -> (Option<Var>, Option<Var>);
}

fn unit_positions<T: Real>(tape: &mut Tape<T>, scene_box: &Aabb, points: &[Vec3]) -> Var {
    let mut data = Vec::with_capacity(points.len() * 3);
    for p in points {
        data.extend(scene_box.contract(*p).iter().map(|v| T::lit(*v)));
    }
    tape.input(points.len(), 3, data)
}

impl<T: Real> RadianceSource<T> for FieldModel<T> {
    fn scene_box(&self) -> &Aabb {
        &self.config.scene_box
    }

    fn proposal_rounds(&self) -> usize {
        self.layout.proposals.len()
    }

    fn proposal_density(&self, tape: &mut Tape<T>, round: usize, points: &[Vec3]) -> Result<Var> {
        let pos = unit_positions(tape, &self.config.scene_box, points);
        FieldModel::proposal_density(self, tape, round, pos)
    }

    fn evaluate(
        &self,
        tape: &mut Tape<T>,
        points: &[Vec3],
        dirs: &[Vec3],
        appearance: &[Option<usize>],
    ) -> Result<FieldVars> {
        let pos = unit_positions(tape, &self.config.scene_box, points);
        self.forward(tape, pos, dirs, appearance)
    }

    fn background(&self, tape: &mut Tape<T>) -> (Option<Var>, Option<Var>) {
        FieldModel::background(self, tape)
    }
}

/// One ray to render, with the appearance row of its source frame
/// (`None` renders with the mean embedding).
#[derive(Clone, Debug, PartialEq)]
pub struct RayInput {
    pub ray: Ray,
    pub appearance: Option<usize>,
}

/// Samples and weights of one sampling pass over a batch. Rays are packed
/// back to back; `offsets[r]..offsets[r+1]` are the bins of ray `r`.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub samples: Vec<RaySamples>,
    pub offsets: Vec<usize>,
    /// `N x 1` weights on the tape.
    pub weights: Var,
}

impl SampleBatch {
    /// Packed normalised-coordinate edges (`n_r + 1` per ray).
    pub fn packed_s_edges(&self) -> Vec<f64> {
        self.samples.iter().flat_map(|s| s.s_edges.iter().copied()).collect()
    }
}

/// Tape handles and host-side summaries of a batch forward pass.
#[derive(Clone, Debug)]
pub struct BatchForward {
    /// `R x 3` composited color.
    pub color: Option<Var>,
    /// `R x 1` composited normalised temperature.
    pub temp_norm: Option<Var>,
    /// `R x 1`.
    pub accumulation: Var,
    pub depth: Vec<f64>,
    pub final_pass: SampleBatch,
    pub proposal_passes: Vec<SampleBatch>,
}

fn pack_offsets(samples: &[RaySamples]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(samples.len() + 1);
    offsets.push(0);
    for s in samples {
        offsets.push(offsets.last().unwrap() + s.len());
    }
    offsets
}

fn sample_points(rays: &[RayInput], samples: &[RaySamples]) -> (Vec<Vec3>, Vec<f64>) {
    let mut points = Vec::new();
    let mut deltas = Vec::new();
    for (r, s) in rays.iter().zip(samples) {
        points.extend(s.centers().map(|t| r.ray.at(t)));
        deltas.extend(s.deltas());
    }
    (points, deltas)
}

/// Records the rendering of `rays` on `tape`. With `rng = None` all sampling
/// is deterministic.
pub fn forward_rays<T: Real, S: RadianceSource<T> + ?Sized>(
    source: &S,
    tape: &mut Tape<T>,
    rays: &[RayInput],
    cfg: &SamplerConfig,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<BatchForward> {
    if rays.is_empty() {
        return Err(Error::Domain("cannot render an empty ray batch".into()));
    }
    let rounds = source.proposal_rounds().min(cfg.proposal_samples.len());
    let mut proposal_passes = Vec::with_capacity(rounds);
    let mut previous: Option<(Vec<RaySamples>, Vec<usize>, Vec<f64>)> = None;

    let next_samples = |prev: &Option<(Vec<RaySamples>, Vec<usize>, Vec<f64>)>,
                        n: usize,
                        rng: Option<&mut dyn RngCore>|
     -> Result<Vec<RaySamples>> {
        let mut rng = rng;
        let mut out = Vec::with_capacity(rays.len());
        for (i, r) in rays.iter().enumerate() {
            let s = match prev {
                None => sample_stratified(&r.ray, n, reborrow(&mut rng))?,
                Some((samples, offsets, w)) => resample_from_weights(
                    &r.ray,
                    &samples[i],
                    &w[offsets[i]..offsets[i + 1]],
                    n,
                    cfg.eps_pdf,
                    reborrow(&mut rng),
                )?,
            };
            out.push(s);
        }
        Ok(out)
    };

    for round in 0..rounds {
        let samples = next_samples(&previous, cfg.proposal_samples[round], reborrow(&mut rng))?;
        let offsets = pack_offsets(&samples);
        let (points, deltas) = sample_points(rays, &samples);
        let sigma = source.proposal_density(tape, round, &points)?;
        let deltas = deltas.into_iter().map(T::lit).collect();
        let weights = record_weights(tape, sigma, deltas, offsets.clone())?;
        let host_w: Vec<f64> = tape.value(weights).iter().map(|w| w.to_f64_lossy()).collect();
        proposal_passes.push(SampleBatch {
            samples: samples.clone(),
            offsets: offsets.clone(),
            weights,
        });
        previous = Some((samples, offsets, host_w));
    }

    let samples = next_samples(&previous, cfg.final_samples, reborrow(&mut rng))?;
    let offsets = pack_offsets(&samples);
    let (points, deltas) = sample_points(rays, &samples);
    let mut dirs = Vec::with_capacity(points.len());
    let mut appearance = Vec::with_capacity(points.len());
    for (r, s) in rays.iter().zip(&samples) {
        dirs.extend(std::iter::repeat_n(r.ray.direction, s.len()));
        appearance.extend(std::iter::repeat_n(r.appearance, s.len()));
    }
    let field = source.evaluate(tape, &points, &dirs, &appearance)?;
    let deltas = deltas.into_iter().map(T::lit).collect();
    let weights = record_weights(tape, field.sigma, deltas, offsets.clone())?;
    let accumulation = record_accumulation(tape, weights, &offsets);
    let (bg_color, bg_temp) = source.background(tape);

    let shade = |tape: &mut Tape<T>, values: Option<Var>, bg: Option<Var>| -> Result<Option<Var>> {
        let Some(values) = values else { return Ok(None) };
        let summed = record_segment_sum(tape, weights, values, &offsets)?;
        Ok(Some(match bg {
            Some(bg) => record_blend(tape, summed, accumulation, bg)?,
            None => summed,
        }))
    };
    let color = shade(tape, field.color, bg_color)?;
    let temp_norm = shade(tape, field.temp_norm, bg_temp)?;

    let w = tape.value(weights);
    let depth = samples
        .iter()
        .zip(offsets.windows(2))
        .map(|(s, seg)| {
            let ws = &w[seg[0]..seg[1]];
            let acc: f64 = ws.iter().map(|v| v.to_f64_lossy()).sum();
            let num: f64 = s.centers().zip(ws).map(|(t, v)| t * v.to_f64_lossy()).sum();
            if acc > 0.0 {
                (num / acc.max(1e-10)).clamp(s.edges[0], *s.edges.last().unwrap())
            } else {
                *s.edges.last().unwrap()
            }
        })
        .collect();

    Ok(BatchForward {
        color,
        temp_norm,
        accumulation,
        depth,
        final_pass: SampleBatch {
            samples,
            offsets,
            weights,
        },
        proposal_passes,
    })
}

/// Bounds a camera ray against the scene box.
pub fn camera_ray(cam: &Camera, scene_box: &Aabb, near_plane: f64, u: f64, v: f64) -> Result<Ray> {
    Ok(scene_box.bound_ray(generate_ray(cam, u, v)?, near_plane))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub sampler: SamplerConfig,
    /// Rays per tape.
    pub chunk: usize,
    pub appearance: Option<usize>,
    /// Seed for in-pixel and along-ray jitter; `None` renders pixel centres
    /// with deterministic bins.
    pub jitter_seed: Option<u64>,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            chunk: 1024,
            appearance: None,
            jitter_seed: None,
            threads: 0,
        }
    }
}

/// Per-pixel render results in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub width: u32,
    pub height: u32,
    /// `3 * W * H` values in [0,1].
    pub rgb: Option<Vec<f64>>,
    /// Degrees Celsius.
    pub thermal: Option<Vec<f64>>,
    pub depth: Vec<f64>,
    pub accumulation: Vec<f64>,
}

struct ChunkOut {
    rgb: Option<Vec<f64>>,
    temp_norm: Option<Vec<f64>>,
    depth: Vec<f64>,
    acc: Vec<f64>,
}

fn render_chunk<T: Real, S: RadianceSource<T> + ?Sized>(
    source: &S,
    cam: &Camera,
    opts: &RenderOptions,
    pixels: std::ops::Range<usize>,
    chunk_index: usize,
) -> Result<ChunkOut> {
    let mut rng = opts
        .jitter_seed
        .map(|seed| ChaCha8Rng::seed_from_u64(seed ^ (chunk_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
    let w = cam.width as usize;
    let mut rays = Vec::with_capacity(pixels.len());
    for p in pixels {
        let (i, j) = (p % w, p / w);
        let (du, dv) = match rng.as_mut() {
            Some(r) => (rand::Rng::random::<f64>(r), rand::Rng::random::<f64>(r)),
            None => (0.5, 0.5),
        };
        let ray = camera_ray(
            cam,
            source.scene_box(),
            opts.sampler.near_plane,
            i as f64 + du,
            j as f64 + dv,
        )?;
        rays.push(RayInput {
            ray,
            appearance: opts.appearance,
        });
    }
    let mut tape = Tape::new();
    let out = forward_rays(
        source,
        &mut tape,
        &rays,
        &opts.sampler,
        rng.as_mut().map(|r| r as &mut dyn RngCore),
    )?;
    let host = |v: Option<Var>| v.map(|v| tape.value(v).iter().map(|x| x.to_f64_lossy()).collect::<Vec<_>>());
    Ok(ChunkOut {
        rgb: host(out.color),
        temp_norm: host(out.temp_norm),
        depth: out.depth,
        acc: host(Some(out.accumulation)).unwrap(),
    })
}

/// Renders every pixel of `cam`. Chunks are distributed over worker threads
/// and reassembled in order, so the result does not depend on the thread
/// count.
pub fn render_view<T: Real, S: RadianceSource<T> + ?Sized>(
    source: &S,
    cam: &Camera,
    temp_bounds: [f64; 2],
    opts: &RenderOptions,
) -> Result<RenderedView> {
    cam.validate()?;
    opts.sampler.validate()?;
    if opts.chunk == 0 {
        return Err(Error::Config("render chunk size must be positive".into()));
    }
    let total = cam.width as usize * cam.height as usize;
    let chunks: Vec<std::ops::Range<usize>> = (0..total)
        .step_by(opts.chunk)
        .map(|s| s..(s + opts.chunk).min(total))
        .collect();
    let threads = match opts.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(chunks.len().max(1));

    let mut results: Vec<Option<Result<ChunkOut>>> = (0..chunks.len()).map(|_| None).collect();
    if threads <= 1 {
        for (k, range) in chunks.iter().enumerate() {
            results[k] = Some(render_chunk(source, cam, opts, range.clone(), k));
        }
    } else {
        let per_worker: Vec<Vec<(usize, Result<ChunkOut>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let chunks = &chunks;
                    scope.spawn(move || {
                        (t..chunks.len())
                            .step_by(threads)
                            .map(|k| (k, render_chunk(source, cam, opts, chunks[k].clone(), k)))
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("render worker panicked"))
                .collect()
        });
        for (k, r) in per_worker.into_iter().flatten() {
            results[k] = Some(r);
        }
    }

    let [lo, hi] = temp_bounds;
    let mut view = RenderedView {
        width: cam.width,
        height: cam.height,
        rgb: None,
        thermal: None,
        depth: Vec::with_capacity(total),
        accumulation: Vec::with_capacity(total),
    };
    for r in results {
        let c = r.expect("every chunk rendered")?;
        if let Some(rgb) = c.rgb {
            view.rgb
                .get_or_insert_with(|| Vec::with_capacity(total * 3))
                .extend(rgb);
        }
        if let Some(t) = c.temp_norm {
            view.thermal
                .get_or_insert_with(|| Vec::with_capacity(total))
                .extend(t.into_iter().map(|v| lo + v * (hi - lo)));
        }
        view.depth.extend(c.depth);
        view.accumulation.extend(c.acc);
    }
    Ok(view)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encodings::HashGridConfig;
    use crate::field::{BackgroundInit, FieldConfig, FieldMode};

    pub(crate) fn small_model(mode: FieldMode, seed: u64) -> FieldModel<f64> {
        let mut cfg = FieldConfig::new(mode, 2, [0.0, 100.0], Aabb::new([-1.0; 3], [1.0; 3]).unwrap());
        cfg.grid = HashGridConfig {
            num_levels: 2,
            min_resolution: 2,
            max_resolution: 8,
            features_per_level: 2,
            table_size_log2: 10,
        };
        cfg.hidden_width = 8;
        cfg.appearance_dim = 2;
        cfg.proposal_nets[0].grid.table_size_log2 = 10;
        cfg.proposal_nets[0].grid.num_levels = 2;
        cfg.proposal_nets[0].hidden_width = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FieldModel::new(cfg, BackgroundInit::default(), &mut rng).unwrap()
    }

    fn cam() -> Camera {
        Camera::look_at([0.0, 0.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 6, 5, 40.0).unwrap()
    }

    fn opts(seed: Option<u64>) -> RenderOptions {
        RenderOptions {
            sampler: SamplerConfig {
                proposal_samples: vec![8],
                final_samples: 6,
                ..SamplerConfig::default()
            },
            chunk: 7,
            jitter_seed: seed,
            threads: 1,
            ..RenderOptions::default()
        }
    }

    #[test]
    fn zero_model_renders_mid_range_over_background() {
        let mut model = small_model(FieldMode::Thermo, 1);
        for g in model.store.groups_mut() {
            if !g.name.starts_with("background") {
                g.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let view = render_view(&model, &cam(), [0.0, 100.0], &opts(None)).unwrap();
        for (t, a) in view.thermal.unwrap().iter().zip(&view.accumulation) {
            // Field and background both sit at 50 degrees.
            assert!(*a > 0.0 && *a < 1.0);
            assert!((t - 50.0).abs() < 1e-9);
        }
    }

    #[test]
    fn repeated_render_is_bitwise_identical() {
        let model = small_model(FieldMode::Thermo, 2);
        for seed in [None, Some(9)] {
            let a = render_view(&model, &cam(), [0.0, 100.0], &opts(seed)).unwrap();
            let b = render_view(&model, &cam(), [0.0, 100.0], &opts(seed)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn thread_count_does_not_change_pixels() {
        let model = small_model(FieldMode::Concat4, 3);
        let one = render_view(&model, &cam(), [0.0, 100.0], &opts(Some(4))).unwrap();
        let many = render_view(
            &model,
            &cam(),
            [0.0, 100.0],
            &RenderOptions {
                threads: 3,
                ..opts(Some(4))
            },
        )
        .unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn rgb_and_thermal_share_weights() {
        let model = small_model(FieldMode::Thermo, 5);
        let rays: Vec<RayInput> = (0..3)
            .map(|i| RayInput {
                ray: camera_ray(&cam(), &model.config.scene_box, 0.05, 1.0 + i as f64, 2.5).unwrap(),
                appearance: Some(1),
            })
            .collect();
        let mut tape = Tape::new();
        let out = forward_rays(&model, &mut tape, &rays, &opts(None).sampler, None).unwrap();
        assert!(out.color.is_some() && out.temp_norm.is_some());
        assert_eq!(out.proposal_passes.len(), 1);
        assert_eq!(out.final_pass.offsets, vec![0, 6, 12, 18]);
        let acc = tape.value(out.accumulation);
        assert!(acc.iter().all(|a| (0.0..=1.0 + 1e-9).contains(a)));
    }
}
