//! The optimisation loop.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Gradients, LrSchedule, OptimizerState, Tape, Var};
use crate::dataset::{sample_ray_batch, RayBatch, SceneDataset, Split};
use crate::error::{Error, Result};
use crate::field::{BackgroundInit, FieldModel};
use crate::losses::{record_distortion, record_interlevel, record_mse, resample_histogram, total_loss, LossParts};
use crate::metrics::{AggregateMetrics, EvalOptions};
use crate::real::Real;
use crate::rendering::{camera_ray, forward_rays, Aabb, BatchForward, RayInput};
use crate::trainer::checkpoint::{group_shapes, Checkpoint, CheckpointMeta, FORMAT_VERSION};
use crate::trainer::config::TrainConfig;
use crate::trainer::eval::{evaluate_model, render_options};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.jsonl";

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iter: u64,
    pub loss: f64,
    pub rgb: f64,
    pub thermal: f64,
    pub distortion: f64,
    pub interlevel: f64,
    pub lr: f64,
    pub rays_per_sec: f64,
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    iter: u64,
    eval: &'a AggregateMetrics,
}

/// The manifest's box if it declares one, else a cube around the training cameras.
pub fn scene_box_for(data: &SceneDataset, inflate: f64) -> Result<Aabb> {
    if let Some(b) = data.manifest.scene_box {
        return Ok(b);
    }
    let centers: Vec<_> = data
        .indices(Split::Train)
        .iter()
        .map(|i| data.frames[*i].camera.center())
        .collect();
    Aabb::from_camera_centers(&centers, inflate)
}

pub struct Trainer {
    pub config: TrainConfig,
    pub data: SceneDataset,
    pub model: FieldModel<f32>,
    pub optimizer: OptimizerState<f32>,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
}

/// Supervision for one chunk, with the batch-wide normalisers.
pub struct ChunkTargets<'a> {
    /// `3 x rays` in [0,1].
    pub rgb: &'a [f32],
    pub temp_norm: &'a [f64],
    pub valid: &'a [bool],
    pub rays_in_batch: f64,
    pub valid_in_batch: usize,
}

/// Records the training objective of one chunk on `tape`: the λ-weighted
/// reconstruction terms plus distortion and interlevel. Each term is divided
/// by its batch-wide count so chunk objectives add up to the batch objective.
/// Returns the unweighted parts and the scalar to differentiate.
pub fn record_training_loss<T: Real>(
    tape: &mut Tape<T>,
    fwd: &BatchForward,
    targets: &ChunkTargets,
    cfg: &TrainConfig,
) -> Result<(LossParts, Var)> {
    let mut parts = LossParts::default();
    let mut terms = Vec::new();
    if let Some(color) = fwd.color {
        let target = targets.rgb.iter().map(|v| T::lit(*v as f64)).collect();
        let v = record_mse(tape, color, target, None, 3.0 * targets.rays_in_batch)?;
        parts.rgb = tape.scalar(v).to_f64_lossy();
        terms.push((v, T::lit(cfg.loss.lambda_r)));
    }
    if let (Some(temp), true) = (fwd.temp_norm, targets.valid_in_batch > 0) {
        let target = targets.temp_norm.iter().map(|t| T::lit(*t)).collect();
        let v = record_mse(
            tape,
            temp,
            target,
            Some(targets.valid.to_vec()),
            targets.valid_in_batch as f64,
        )?;
        parts.thermal = tape.scalar(v).to_f64_lossy();
        terms.push((v, T::lit(cfg.loss.lambda_t)));
    }
    let fin = &fwd.final_pass;
    let s_edges = fin.packed_s_edges().into_iter().map(T::lit).collect();
    let dist = record_distortion(
        tape,
        fin.weights,
        s_edges,
        fin.offsets.clone(),
        cfg.loss.lambda_dist / targets.rays_in_batch,
    )?;
    parts.distortion = tape.scalar(dist).to_f64_lossy();
    terms.push((dist, T::one()));
    // Final weights enter the interlevel term as constants.
    let final_w: Vec<f64> = tape.value(fin.weights).iter().map(|w| w.to_f64_lossy()).collect();
    for pass in &fwd.proposal_passes {
        let mut hist = Vec::with_capacity(*pass.offsets.last().unwrap_or(&0));
        for (r, seg) in fin.offsets.windows(2).enumerate() {
            let h = resample_histogram(
                &fin.samples[r].s_edges,
                &final_w[seg[0]..seg[1]],
                &pass.samples[r].s_edges,
            );
            hist.extend(h.into_iter().map(T::lit));
        }
        let il = record_interlevel(
            tape,
            pass.weights,
            hist,
            pass.offsets.clone(),
            cfg.interlevel_eps,
            cfg.loss.lambda_interl / targets.rays_in_batch,
        )?;
        parts.interlevel += tape.scalar(il).to_f64_lossy();
        terms.push((il, T::one()));
    }
    Ok((parts, tape.weighted_sum(&terms)?))
}

/// Everything a worker needs to process one chunk of rays.
struct ChunkJob<'a> {
    rays: &'a [RayInput],
    rgb: &'a [f32],
    temp: &'a [f64],
    valid: &'a [bool],
    seed: u64,
}

struct Denominators {
    rays: f64,
    valid_thermal: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: SceneDataset) -> Result<Self> {
        config.validate()?;
        let scene_box = scene_box_for(&data, config.scene_box_inflate)?;
        let field_cfg = config
            .model
            .field_config(config.mode, data.num_train(), data.t_bounds(), scene_box);
        let (bg_color, bg_temp) = data.train_means();
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        init_rng.set_stream(1);
        let model = FieldModel::new(
            field_cfg,
            BackgroundInit {
                color: bg_color,
                temp_norm: bg_temp,
            },
            &mut init_rng,
        )?;
        let optimizer = OptimizerState::new(&model.store, schedule_of(&config), AdamConfig::default());
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            data,
            model,
            optimizer,
            iteration: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint, data: SceneDataset) -> Result<Self> {
        if ckpt.meta.manifest_digest != data.digest {
            log::warn!("scene manifest differs from the one the checkpoint was trained on");
        }
        if ckpt.meta.field.num_appearance != data.num_train() {
            return Err(Error::Dataset(format!(
                "checkpoint has {} appearance rows but the scene has {} training frames",
                ckpt.meta.field.num_appearance,
                data.num_train()
            )));
        }
        Ok(Self {
            config: ckpt.meta.config,
            data,
            model: ckpt.model,
            optimizer: ckpt.optimizer,
            rng: ckpt.meta.rng,
            iteration: ckpt.meta.iteration,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                config: self.config.clone(),
                field: self.model.config.clone(),
                groups: group_shapes(&self.model),
                iteration: self.iteration,
                schedule: self.optimizer.schedule,
                adam: self.optimizer.adam,
                rng: self.rng.clone(),
                manifest_digest: self.data.digest.clone(),
            },
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    fn batch_rays(&mut self, batch: &RayBatch) -> Result<Vec<RayInput>> {
        let scene_box = self.model.config.scene_box;
        let mut rays = Vec::with_capacity(batch.len());
        for k in 0..batch.len() {
            let cam = &self.data.frames[batch.frame[k]].camera;
            let (du, dv) = if self.config.pixel_jitter {
                (self.rng.random::<f64>(), self.rng.random::<f64>())
            } else {
                (0.5, 0.5)
            };
            let (i, j) = batch.pixel[k];
            let ray = camera_ray(
                cam,
                &scene_box,
                self.config.sampler.near_plane,
                i as f64 + du,
                j as f64 + dv,
            )?;
            rays.push(RayInput {
                ray,
                appearance: Some(batch.appearance[k]),
            });
        }
        Ok(rays)
    }

    /// Loss and gradients of the next batch without updating anything but
    /// the rng. Exposed for gradient inspection in tests.
    pub fn batch_gradients(&mut self) -> ChunkResult {
        let batch = sample_ray_batch(&self.data, self.config.rays_per_batch, &mut self.rng);
        let rays = self.batch_rays(&batch)?;
        let chunk = self.config.chunk_rays;
        let n_chunks = rays.len().div_ceil(chunk);
        let seeds: Vec<u64> = (0..n_chunks).map(|_| self.rng.next_u64()).collect();
        let den = Denominators {
            rays: rays.len() as f64,
            valid_thermal: batch.valid.iter().filter(|v| **v).count(),
        };
        if self.model.mode().has_thermal() && den.valid_thermal == 0 {
            log::warn!("thermal loss skipped: no valid thermal pixels in batch");
        }
        let jobs: Vec<ChunkJob> = (0..n_chunks)
            .map(|c| {
                let r = c * chunk..((c + 1) * chunk).min(rays.len());
                ChunkJob {
                    rays: &rays[r.clone()],
                    rgb: &batch.rgb[3 * r.start..3 * r.end],
                    temp: &batch.temp_norm[r.clone()],
                    valid: &batch.valid[r.clone()],
                    seed: seeds[c],
                }
            })
            .collect();
        let threads = match self.config.threads {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
        .min(jobs.len());
        let results: Vec<ChunkResult> = if threads <= 1 {
            jobs.iter().map(|j| self.chunk(j, &den)).collect()
        } else {
            let this = &*self;
            let mut slots: Vec<Option<ChunkResult>> = (0..jobs.len()).map(|_| None).collect();
            let done: Vec<Vec<(usize, ChunkResult)>> = std::thread::scope(|s| {
                let handles: Vec<_> = (0..threads)
                    .map(|t| {
                        let jobs = &jobs;
                        let den = &den;
                        s.spawn(move || {
                            (t..jobs.len())
                                .step_by(threads)
                                .map(|k| (k, this.chunk(&jobs[k], den)))
                                .collect()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training worker panicked"))
                    .collect()
            });
            for (k, r) in done.into_iter().flatten() {
                slots[k] = Some(r);
            }
            slots.into_iter().map(|s| s.expect("every chunk processed")).collect()
        };
        let mut parts = LossParts::default();
        let mut grads = Gradients::zeros_like(&self.model.store);
        for r in results {
            let (p, g) = r?;
            parts.rgb += p.rgb;
            parts.thermal += p.thermal;
            parts.distortion += p.distortion;
            parts.interlevel += p.interlevel;
            grads.add_assign(&g);
        }
        Ok((parts, grads))
    }

    fn chunk(&self, job: &ChunkJob, den: &Denominators) -> ChunkResult {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
        let fwd = forward_rays(
            &self.model,
            &mut tape,
            job.rays,
            &self.config.sampler,
            Some(&mut rng as &mut dyn RngCore),
        )?;
        let targets = ChunkTargets {
            rgb: job.rgb,
            temp_norm: job.temp,
            valid: job.valid,
            rays_in_batch: den.rays,
            valid_in_batch: den.valid_thermal,
        };
        let (parts, total) = record_training_loss(&mut tape, &fwd, &targets, &self.config)?;
        let mut grads = Gradients::zeros_like(&self.model.store);
        tape.backward(total, 1.0, &self.model.store, &mut grads)?;
        Ok((parts, grads))
    }

    /// One optimiser step. On a non-finite loss or gradient the parameters
    /// are left untouched and a training error is returned.
    pub fn step(&mut self) -> Result<StepRecord> {
        let start = Instant::now();
        let (parts, grads) = self.batch_gradients()?;
        let loss = total_loss(&parts, &self.config.loss)?;
        let lr = self.optimizer.adam_step(&mut self.model.store, &grads)?;
        self.iteration += 1;
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        Ok(StepRecord {
            iter: self.iteration,
            loss,
            rgb: parts.rgb,
            thermal: parts.thermal,
            distortion: parts.distortion,
            interlevel: parts.interlevel,
            lr,
            rays_per_sec: self.config.rays_per_batch as f64 / secs,
        })
    }

    /// Trains up to `config.iterations`, writing the log and checkpoints under
    /// `out` when given. Returns the record of the last step.
    pub fn run(&mut self, out: Option<&Path>) -> Result<Option<StepRecord>> {
        self.run_until(out, self.config.iterations)
    }

    /// Like [`Trainer::run`] but stops after iteration `until` (capped at the
    /// configured total); the schedule still spans the full run.
    pub fn run_until(&mut self, out: Option<&Path>, until: u64) -> Result<Option<StepRecord>> {
        let until = until.min(self.config.iterations);
        let mut log_file = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let p = dir.join(LOG_FILE);
                let f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&p)
                    .map_err(|e| Error::io(&p, e))?;
                Some((p, f))
            }
            None => None,
        };
        let mut last = None;
        while self.iteration < until {
            let rec = match self.step() {
                Ok(r) => r,
                Err(e) => {
                    if let (Some(dir), Error::Training { .. }) = (out, &e) {
                        self.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
                        log::error!(
                            "training aborted at iteration {}; last good state saved",
                            self.iteration
                        );
                    }
                    return Err(e);
                }
            };
            let it = rec.iter;
            let log_now = self.config.log_every > 0 && (it % self.config.log_every == 0 || it == 1);
            if let Some((p, f)) = log_file.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&*p, e))?;
            }
            if log_now {
                log::info!("{}", serde_json::to_string(&rec)?);
            }
            if self.config.eval_every > 0 && it % self.config.eval_every == 0 && self.model.mode().has_thermal() {
                let test = self.data.indices(Split::Test);
                if !test.is_empty() {
                    let report = evaluate_model(
                        &self.model,
                        &self.data,
                        &test,
                        &render_options(&self.config),
                        &EvalOptions::default(),
                    )?;
                    let line = serde_json::to_string(&EvalRecord {
                        iter: it,
                        eval: &report.aggregate,
                    })?;
                    log::info!("{line}");
                    if let Some((p, f)) = log_file.as_mut() {
                        writeln!(f, "{line}").map_err(|e| Error::io(&*p, e))?;
                    }
                }
            }
            if let Some(dir) = out {
                if self.config.checkpoint_every > 0 && it % self.config.checkpoint_every == 0 {
                    let ck = self.checkpoint();
                    ck.save(&numbered_checkpoint(dir, it))?;
                    ck.save(&dir.join(CHECKPOINT_FILE))?;
                }
            }
            last = Some(rec);
        }
        if let Some(dir) = out {
            self.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
        }
        Ok(last)
    }
}

type ChunkResult = Result<(LossParts, Gradients<f32>)>;

pub fn numbered_checkpoint(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("checkpoint_{iteration:06}.bin"))
}

pub fn schedule_of(cfg: &TrainConfig) -> LrSchedule {
    LrSchedule {
        base_lr: cfg.base_lr,
        final_lr: cfg.final_lr,
        total_steps: cfg.iterations,
        warmup_steps: cfg.warmup_steps,
        warmup_factor: cfg.warmup_factor,
    }
}
