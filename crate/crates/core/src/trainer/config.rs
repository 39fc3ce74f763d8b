//! Training configuration, presets and config-file loading.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::LoadOptions;
use crate::encodings::{HashGridConfig, ShConfig};
use crate::error::{Error, Result};
use crate::field::{FieldConfig, FieldMode, ProposalNetConfig};
use crate::losses::LossWeights;
use crate::rendering::{Aabb, SamplerConfig};

/// Network sizes; scene-dependent parts of the field are filled in at training time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub grid: HashGridConfig,
    pub sh: ShConfig,
    pub hidden_width: usize,
    pub appearance_dim: usize,
    pub proposal_nets: Vec<ProposalNetConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig::default(),
            sh: ShConfig::default(),
            hidden_width: 64,
            appearance_dim: 32,
            proposal_nets: vec![ProposalNetConfig::default()],
        }
    }
}

impl ModelConfig {
    pub fn field_config(
        &self,
        mode: FieldMode,
        num_appearance: usize,
        temp_bounds: [f64; 2],
        scene_box: Aabb,
    ) -> FieldConfig {
        let mut cfg = FieldConfig::new(mode, num_appearance, temp_bounds, scene_box);
        cfg.grid = self.grid.clone();
        cfg.sh = self.sh;
        cfg.hidden_width = self.hidden_width;
        cfg.appearance_dim = self.appearance_dim;
        cfg.proposal_nets = self.proposal_nets.clone();
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub rays_per_batch: usize,
    pub base_lr: f64,
    pub final_lr: f64,
    /// Steps at `warmup_factor * lr` at the start; 0 disables warmup.
    pub warmup_steps: u64,
    pub warmup_factor: f64,
    pub mode: FieldMode,
    pub loss: LossWeights,
    /// Floor added to the proposal histogram in the interlevel term.
    pub interlevel_eps: f64,
    pub sampler: SamplerConfig,
    pub model: ModelConfig,
    pub seed: u64,
    /// 0 disables periodic evaluation.
    pub eval_every: u64,
    /// 0 writes a checkpoint only at the end.
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Rays per tape; gradients of the chunks are summed in order.
    pub chunk_rays: usize,
    /// Worker threads for chunks and rendering; 0 uses all cores.
    pub threads: usize,
    /// Scene box half-size relative to the camera-position bounds.
    pub scene_box_inflate: f64,
    /// Random sub-pixel ray positions (otherwise pixel centres).
    pub pixel_jitter: bool,
    pub load: LoadOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            rays_per_batch: 4096,
            base_lr: 1e-2,
            final_lr: 1e-3,
            warmup_steps: 200,
            warmup_factor: 0.1,
            mode: FieldMode::Thermo,
            loss: LossWeights::default(),
            interlevel_eps: 1e-3,
            sampler: SamplerConfig::default(),
            model: ModelConfig::default(),
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            log_every: 100,
            chunk_rays: 1024,
            threads: 0,
            scene_box_inflate: 1.5,
            pixel_jitter: false,
            load: LoadOptions::default(),
        }
    }
}

pub const PRESETS: &[&str] = &["full", "synth-small", "synth-tiny"];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.rays_per_batch == 0 || self.chunk_rays == 0 {
            return Err(Error::Config("rays_per_batch and chunk_rays must be >= 1".into()));
        }
        if !(self.base_lr > 0.0 && self.final_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.warmup_factor > 0.0) {
            return Err(Error::Config("warmup_factor must be positive".into()));
        }
        if !(self.interlevel_eps > 0.0) {
            return Err(Error::Config("interlevel_eps must be positive".into()));
        }
        if !(self.scene_box_inflate >= 1.0) {
            return Err(Error::Config("scene_box_inflate must be >= 1".into()));
        }
        self.loss.validate()?;
        self.sampler.validate()
    }

    /// Named preset. `full` is the default configuration.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::default()),
            "synth-small" => Ok(Self::synth_small()),
            "synth-tiny" => Ok(Self::synth_tiny()),
            other => Err(Error::Usage(format!(
                "unknown preset `{other}` (known: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Desk-scale run on the 64x64 synthetic scenes.
    pub fn synth_small() -> Self {
        Self {
            iterations: 2000,
            rays_per_batch: 256,
            base_lr: 1e-2,
            final_lr: 1e-3,
            warmup_steps: 50,
            sampler: SamplerConfig {
                proposal_samples: vec![32],
                final_samples: 16,
                eps_pdf: 0.01,
                near_plane: 0.05,
            },
            model: ModelConfig {
                grid: HashGridConfig {
                    num_levels: 8,
                    min_resolution: 16,
                    max_resolution: 256,
                    features_per_level: 2,
                    table_size_log2: 14,
                },
                sh: ShConfig::default(),
                hidden_width: 32,
                appearance_dim: 8,
                proposal_nets: vec![ProposalNetConfig {
                    grid: HashGridConfig {
                        num_levels: 4,
                        min_resolution: 16,
                        max_resolution: 64,
                        features_per_level: 2,
                        table_size_log2: 12,
                    },
                    hidden_width: 16,
                }],
            },
            log_every: 100,
            chunk_rays: 256,
            ..Self::default()
        }
    }

    /// Minimal settings for smoke tests.
    pub fn synth_tiny() -> Self {
        let mut cfg = Self::synth_small();
        cfg.iterations = 20;
        cfg.rays_per_batch = 64;
        cfg.chunk_rays = 32;
        cfg.warmup_steps = 5;
        cfg.sampler.proposal_samples = vec![12];
        cfg.sampler.final_samples = 8;
        cfg.model.grid.num_levels = 4;
        cfg.model.grid.max_resolution = 64;
        cfg.model.grid.table_size_log2 = 12;
        cfg.model.hidden_width = 16;
        cfg.model.proposal_nets[0].grid.num_levels = 2;
        cfg.model.proposal_nets[0].grid.table_size_log2 = 10;
        cfg.model.proposal_nets[0].hidden_width = 8;
        cfg.log_every = 5;
        cfg
    }

    /// Reads a TOML or JSON file over `base`: keys present in the file
    /// replace the corresponding values, recursively through tables.
    pub fn from_file_over(base: &Self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |e: String| Error::Config(format!("{}: {e}", path.display()));
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let overlay: serde_json::Value = if is_json {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
        } else {
            let t: toml::Value = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
            serde_json::to_value(t)?
        };
        let mut merged = serde_json::to_value(base)?;
        merge(&mut merged, overlay);
        serde_json::from_value(merged).map_err(|e| bad(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_file_over(&Self::default(), path)
    }
}

fn merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.iterations, c.rays_per_batch), (30_000, 4096));
        assert_eq!((c.base_lr, c.final_lr), (1e-2, 1e-3));
        assert_eq!(c.loss.lambda_r, 1.0);
        assert_eq!(c.loss.lambda_t, 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            TrainConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(matches!(TrainConfig::preset("nope"), Err(Error::Usage(_))));
    }

    #[test]
    fn toml_partial_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "iterations = 7\nmode = \"concat4\"\n[loss]\nlambda_t = 0.0\n").unwrap();
        let c = TrainConfig::from_file(&path).unwrap();
        assert_eq!(c.iterations, 7);
        assert_eq!(c.mode, FieldMode::Concat4);
        assert_eq!(c.loss.lambda_t, 0.0);
        assert_eq!(c.loss.lambda_r, 1.0);
        let small = TrainConfig::from_file_over(&TrainConfig::synth_small(), &path).unwrap();
        assert_eq!(small.model.hidden_width, 32);
        assert_eq!(small.iterations, 7);
    }

    #[test]
    fn zero_iterations_rejected() {
        let c = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
