//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` metadata length, the
//! metadata as JSON, then little-endian `f32` parameter values followed by
//! the first and second Adam moments, each in parameter-group order.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, LrSchedule, OptimizerState};
use crate::error::{Error, Result};
use crate::field::{BackgroundInit, FieldConfig, FieldModel};
use crate::trainer::config::TrainConfig;

pub const MAGIC: &[u8; 8] = b"TNERFCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: TrainConfig,
    pub field: FieldConfig,
    pub groups: Vec<GroupShape>,
    pub iteration: u64,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub rng: ChaCha8Rng,
    pub manifest_digest: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: FieldModel<f32>,
    pub optimizer: OptimizerState<f32>,
}

impl Checkpoint {
    pub fn iteration(&self) -> u64 {
        self.meta.iteration
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.meta)?;
        let n = self.model.store.num_scalars();
        let mut out = Vec::with_capacity(20 + json.len() + 12 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for g in self.model.store.groups() {
            g.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        for block in [&self.optimizer.first_moment, &self.optimizer.second_moment] {
            for g in block {
                g.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Dataset(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let json_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let json_end = 20usize
            .checked_add(json_len)
            .filter(|e| *e <= bytes.len())
            .ok_or_else(|| bad("truncated metadata"))?;
        let meta: CheckpointMeta = serde_json::from_slice(&bytes[20..json_end])?;
        // Shapes come from the stored field config; the init values are overwritten.
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        let mut model = FieldModel::<f32>::new(meta.field.clone(), BackgroundInit::default(), &mut scratch)?;
        let shapes: Vec<GroupShape> = model
            .store
            .groups()
            .iter()
            .map(|g| GroupShape {
                name: g.name.clone(),
                rows: g.rows,
                cols: g.cols,
            })
            .collect();
        if shapes != meta.groups {
            return Err(bad("parameter layout does not match the stored configuration"));
        }
        let n = model.store.num_scalars();
        let payload = &bytes[json_end..];
        if payload.len() != 12 * n {
            return Err(bad(&format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                12 * n
            )));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        for g in model.store.groups_mut() {
            g.data.iter_mut().for_each(|v| *v = floats.next().unwrap());
        }
        let mut optimizer = OptimizerState::new(&model.store, meta.schedule, meta.adam);
        optimizer.step = meta.iteration;
        for block in [&mut optimizer.first_moment, &mut optimizer.second_moment] {
            for g in block.iter_mut() {
                g.iter_mut().for_each(|v| *v = floats.next().unwrap());
            }
        }
        Ok(Self { meta, model, optimizer })
    }

    /// Writes atomically: a temporary sibling is renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn group_shapes(model: &FieldModel<f32>) -> Vec<GroupShape> {
    model
        .store
        .groups()
        .iter()
        .map(|g| GroupShape {
            name: g.name.clone(),
            rows: g.rows,
            cols: g.cols,
        })
        .collect()
}
