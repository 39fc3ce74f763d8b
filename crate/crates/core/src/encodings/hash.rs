//! Multiresolution hash grid encoding.
//!
//! Level `l` covers the unit cube with `N_l` cells per axis. Its 8 enclosing
//! corner features are fetched (directly indexed when the dense vertex grid
//! fits in the table, spatially hashed otherwise) and trilinearly blended.
//! Outputs of all levels are concatenated, level-major.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::params::{ParamId, ParamStore};
use crate::autodiff::tape::{BackwardCtx, CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashGridConfig {
    pub num_levels: usize,
    pub min_resolution: usize,
    pub max_resolution: usize,
    pub features_per_level: usize,
    pub table_size_log2: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            num_levels: 16,
            min_resolution: 16,
            max_resolution: 1024,
            features_per_level: 2,
            table_size_log2: 19,
        }
    }
}

/// Precomputed per-level addressing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelInfo {
    pub resolution: usize,
    /// Dense levels index vertices directly; sparse ones hash.
    pub dense: bool,
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_levels == 0 {
            return Err(Error::Config("hash grid needs at least one level".into()));
        }
        if self.min_resolution < 1 || self.max_resolution < self.min_resolution {
            return Err(Error::Config(format!(
                "hash grid resolutions must satisfy 1 <= min <= max, got {}..{}",
                self.min_resolution, self.max_resolution
            )));
        }
        if self.features_per_level == 0 {
            return Err(Error::Config("features_per_level must be >= 1".into()));
        }
        if !(10..=24).contains(&self.table_size_log2) {
            return Err(Error::Config(format!(
                "table_size_log2 must lie in [10, 24], got {}",
                self.table_size_log2
            )));
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1usize << self.table_size_log2
    }

    pub fn output_dim(&self) -> usize {
        self.num_levels * self.features_per_level
    }

    /// Number of scalars across all level tables.
    pub fn param_count(&self) -> usize {
        self.num_levels * self.table_size() * self.features_per_level
    }

    pub fn growth_factor(&self) -> f64 {
        if self.num_levels == 1 {
            return 1.0;
        }
        ((self.max_resolution as f64 / self.min_resolution as f64).ln() / (self.num_levels - 1) as f64).exp()
    }

    pub fn level_resolution(&self, level: usize) -> usize {
        let b = self.growth_factor();
        // The nudge keeps exact powers (e.g. 16 * 64) from flooring one short.
        let r = self.min_resolution as f64 * b.powi(level as i32);
        ((r * (1.0 + 1e-12)).floor() as usize).max(1)
    }

    pub fn levels(&self) -> Vec<LevelInfo> {
        let table = self.table_size() as u128;
        (0..self.num_levels)
            .map(|l| {
                let resolution = self.level_resolution(l);
                let verts = (resolution as u128 + 1).pow(3);
                LevelInfo {
                    resolution,
                    dense: verts <= table,
                }
            })
            .collect()
    }
}

/// Learnable feature tables, stored flat as `[level][entry][feature]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HashGridParams<T> {
    pub data: Vec<T>,
}

impl<T: Real> HashGridParams<T> {
    pub fn zeros(cfg: &HashGridConfig) -> Self {
        Self {
            data: vec![T::zero(); cfg.param_count()],
        }
    }

    /// Uniform initialisation in [-1e-4, 1e-4].
    pub fn init(cfg: &HashGridConfig, rng: &mut impl Rng) -> Self {
        Self {
            data: init_table(cfg, rng),
        }
    }

    pub fn level<'a>(&'a self, cfg: &HashGridConfig, level: usize) -> &'a [T] {
        let n = cfg.table_size() * cfg.features_per_level;
        &self.data[level * n..(level + 1) * n]
    }

    pub fn num_tables(&self, cfg: &HashGridConfig) -> usize {
        self.data.len() / (cfg.table_size() * cfg.features_per_level)
    }
}

pub(crate) fn init_table<T: Real>(cfg: &HashGridConfig, rng: &mut impl Rng) -> Vec<T> {
    (0..cfg.param_count())
        .map(|_| T::lit(rng.random_range(-1e-4..=1e-4)))
        .collect()
}

#[inline]
fn vertex_index(info: LevelInfo, table_mask: u32, c: [u32; 3]) -> usize {
    if info.dense {
        let s = info.resolution as u32 + 1;
        (c[0] + s * (c[1] + s * c[2])) as usize
    } else {
        let h = c[0].wrapping_mul(PRIMES[0]) ^ c[1].wrapping_mul(PRIMES[1]) ^ c[2].wrapping_mul(PRIMES[2]);
        (h & table_mask) as usize
    }
}

/// Voxel addressing for one level: corner table indices, trilinear weights and
/// in-voxel fractions.
#[inline]
fn level_corners<T: Real>(info: LevelInfo, table_mask: u32, x: [T; 3]) -> ([usize; 8], [T; 8], [T; 3]) {
    let res = T::from_usize(info.resolution).unwrap();
    let mut base = [0u32; 3];
    let mut frac = [T::zero(); 3];
    for a in 0..3 {
        let p = x[a] * res;
        let i = p.floor().to_usize().unwrap_or(0).min(info.resolution - 1);
        base[a] = i as u32;
        frac[a] = p - T::from_usize(i).unwrap();
    }
    let mut idx = [0usize; 8];
    let mut w = [T::zero(); 8];
    for c in 0..8 {
        let mut coord = base;
        let mut wc = T::one();
        for a in 0..3 {
            if (c >> a) & 1 == 1 {
                coord[a] += 1;
                wc *= frac[a];
            } else {
                wc *= T::one() - frac[a];
            }
        }
        idx[c] = vertex_index(info, table_mask, coord);
        w[c] = wc;
    }
    (idx, w, frac)
}

pub(crate) fn check_unit_cube<T: Real>(x: [T; 3]) -> Result<()> {
    for (a, v) in x.iter().enumerate() {
        if !(*v >= T::zero() && *v <= T::one()) {
            return Err(Error::Domain(format!(
                "hash encoding expects coordinates in [0,1], axis {a} is {v}"
            )));
        }
    }
    Ok(())
}

/// Encodes one position. `table` is the flat table of all levels and `out`
/// receives `num_levels * features_per_level` values.
pub fn hash_encode<T: Real>(
    cfg: &HashGridConfig,
    levels: &[LevelInfo],
    table: &[T],
    x: [T; 3],
    out: &mut [T],
) -> Result<()> {
    check_unit_cube(x)?;
    if table.len() != cfg.param_count() || out.len() != cfg.output_dim() {
        return Err(Error::Config("hash grid buffers do not match config".into()));
    }
    encode_unchecked(cfg, levels, table, x, out);
    Ok(())
}

#[inline]
pub(crate) fn encode_unchecked<T: Real>(
    cfg: &HashGridConfig,
    levels: &[LevelInfo],
    table: &[T],
    x: [T; 3],
    out: &mut [T],
) {
    let f = cfg.features_per_level;
    let level_len = cfg.table_size() * f;
    let mask = (cfg.table_size() - 1) as u32;
    for (l, info) in levels.iter().enumerate() {
        let (idx, w, _) = level_corners(*info, mask, x);
        let tab = &table[l * level_len..(l + 1) * level_len];
        let o = &mut out[l * f..(l + 1) * f];
        o.iter_mut().for_each(|v| *v = T::zero());
        for c in 0..8 {
            let entry = &tab[idx[c] * f..idx[c] * f + f];
            for k in 0..f {
                o[k] += w[c] * entry[k];
            }
        }
    }
}

/// Accumulates the adjoint of one encoding into `d_table` and, when requested,
/// into the position adjoint `d_x`.
pub fn hash_encode_backward<T: Real>(
    cfg: &HashGridConfig,
    levels: &[LevelInfo],
    table: &[T],
    x: [T; 3],
    d_out: &[T],
    d_table: &mut [T],
    d_x: Option<&mut [T; 3]>,
) {
    let f = cfg.features_per_level;
    let level_len = cfg.table_size() * f;
    let mask = (cfg.table_size() - 1) as u32;
    let mut gx = [T::zero(); 3];
    let want_x = d_x.is_some();
    for (l, info) in levels.iter().enumerate() {
        let g = &d_out[l * f..(l + 1) * f];
        if g.iter().all(|v| *v == T::zero()) {
            continue;
        }
        let (idx, w, frac) = level_corners(*info, mask, x);
        let base = l * level_len;
        for c in 0..8 {
            let dst = &mut d_table[base + idx[c] * f..base + idx[c] * f + f];
            for k in 0..f {
                dst[k] += w[c] * g[k];
            }
        }
        if want_x {
            let res = T::from_usize(info.resolution).unwrap();
            let tab = &table[base..base + level_len];
            for c in 0..8 {
                let entry = &tab[idx[c] * f..idx[c] * f + f];
                let dot: T = (0..f).map(|k| entry[k] * g[k]).sum();
                if dot == T::zero() {
                    continue;
                }
                for (a, ga) in gx.iter_mut().enumerate() {
                    // d(weight)/d(frac_a): product of the other two axis factors, signed.
                    let mut dw = if (c >> a) & 1 == 1 { T::one() } else { -T::one() };
                    for (b, fb) in frac.iter().enumerate() {
                        if b != a {
                            dw *= if (c >> b) & 1 == 1 { *fb } else { T::one() - *fb };
                        }
                    }
                    *ga += dot * dw * res;
                }
            }
        }
    }
    if let Some(dx) = d_x {
        for a in 0..3 {
            dx[a] += gx[a];
        }
    }
}

// ---------------------------------------------------------------------------
// Tape adapter.

struct HashEncodeOp {
    cfg: HashGridConfig,
    levels: Vec<LevelInfo>,
    table: ParamId,
}

impl<T: Real> CustomOp<T> for HashEncodeOp {
    fn name(&self) -> &'static str {
        "hash_encode"
    }

    fn touches_params(&self) -> bool {
        true
    }

    fn backward(&self, mut ctx: BackwardCtx<'_, T>) {
        let pos = ctx.inputs[0];
        let dim = self.cfg.output_dim();
        let table = &ctx.params.get(self.table).data;
        let d_table = ctx.param_grads.get_mut(self.table);
        let mut d_pos = ctx.input_grads[0].as_deref_mut();
        for (i, p) in pos.chunks_exact(3).enumerate() {
            let x = [p[0], p[1], p[2]];
            let g = &ctx.out_grad[i * dim..(i + 1) * dim];
            match d_pos.as_deref_mut() {
                Some(dp) => {
                    let mut gx = [T::zero(); 3];
                    hash_encode_backward(&self.cfg, &self.levels, table, x, g, d_table, Some(&mut gx));
                    for a in 0..3 {
                        dp[i * 3 + a] += gx[a];
                    }
                }
                None => hash_encode_backward(&self.cfg, &self.levels, table, x, g, d_table, None),
            }
        }
    }
}

/// Encodes `positions` (`N x 3`, unit cube) with the table stored under `table`.
pub fn record_hash_encode<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    table: ParamId,
    cfg: &HashGridConfig,
    positions: Var,
) -> Result<Var> {
    let (n, c) = tape.shape(positions);
    if c != 3 {
        return Err(Error::Config(format!("positions must have 3 columns, got {c}")));
    }
    let data = &store.get(table).data;
    if data.len() != cfg.param_count() {
        return Err(Error::Config(format!(
            "hash table `{}` has {} entries, config expects {}",
            store.get(table).name,
            data.len(),
            cfg.param_count()
        )));
    }
    let levels = cfg.levels();
    let dim = cfg.output_dim();
    let mut out = vec![T::zero(); n * dim];
    for (i, p) in tape.value(positions).chunks_exact(3).enumerate() {
        let x = [p[0], p[1], p[2]];
        check_unit_cube(x)?;
        encode_unchecked(cfg, &levels, data, x, &mut out[i * dim..(i + 1) * dim]);
    }
    Ok(tape.custom(
        vec![positions],
        n,
        dim,
        out,
        Box::new(HashEncodeOp {
            cfg: cfg.clone(),
            levels,
            table,
        }),
    ))
}
