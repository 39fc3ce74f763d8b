use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::mlp::{mlp_forward, MlpParams, MlpSpec, OutputActivation};
use crate::autodiff::params::{ParamId, ParamStore};
use crate::autodiff::tape::{Tape, Var};
use crate::encodings::hash::{init_table, record_hash_encode, HashGridConfig};
use crate::encodings::sh::{sh_encode, ShConfig};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rendering::scene_box::Aabb;

/// Which networks exist and what they are supervised with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldMode {
    /// Shared density network, view-dependent color head, and a thermal head
    /// that sees only the density features.
    #[serde(rename = "thermo")]
    Thermo,
    #[serde(rename = "rgb")]
    RgbOnly,
    /// Thermal images treated as single-channel grayscale through the color path.
    #[serde(rename = "thermal-only")]
    ThermalOnly,
    /// One 4-channel head over (features, direction, appearance).
    #[serde(rename = "concat4")]
    Concat4,
}

impl FieldMode {
    pub fn has_rgb(self) -> bool {
        !matches!(self, FieldMode::ThermalOnly)
    }

    pub fn has_thermal(self) -> bool {
        !matches!(self, FieldMode::RgbOnly)
    }

    fn color_head_outputs(self) -> usize {
        match self {
            FieldMode::Thermo | FieldMode::RgbOnly => 3,
            FieldMode::ThermalOnly => 1,
            FieldMode::Concat4 => 4,
        }
    }
}

impl fmt::Display for FieldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldMode::Thermo => "thermo",
            FieldMode::RgbOnly => "rgb",
            FieldMode::ThermalOnly => "thermal-only",
            FieldMode::Concat4 => "concat4",
        })
    }
}

impl FromStr for FieldMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thermo" => Ok(FieldMode::Thermo),
            "rgb" => Ok(FieldMode::RgbOnly),
            "thermal-only" => Ok(FieldMode::ThermalOnly),
            "concat4" => Ok(FieldMode::Concat4),
            other => Err(Error::Usage(format!("unknown field mode `{other}`"))),
        }
    }
}

/// Density-only network used to place the final samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalNetConfig {
    pub grid: HashGridConfig,
    pub hidden_width: usize,
}

impl Default for ProposalNetConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig {
                num_levels: 5,
                min_resolution: 16,
                max_resolution: 128,
                features_per_level: 2,
                table_size_log2: 17,
            },
            hidden_width: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub mode: FieldMode,
    pub grid: HashGridConfig,
    pub sh: ShConfig,
    pub hidden_width: usize,
    /// Linear layers in the density network; its last hidden activation is `f`.
    pub density_layers: usize,
    pub color_layers: usize,
    pub thermal_layers: usize,
    pub appearance_dim: usize,
    /// Rows of the appearance table (one per training frame).
    pub num_appearance: usize,
    /// Temperature bounds in degrees Celsius used to map the sigmoid head.
    pub temp_bounds: [f64; 2],
    pub scene_box: Aabb,
    pub proposal_nets: Vec<ProposalNetConfig>,
}

impl FieldConfig {
    pub fn new(mode: FieldMode, num_appearance: usize, temp_bounds: [f64; 2], scene_box: Aabb) -> Self {
        Self {
            mode,
            grid: HashGridConfig::default(),
            sh: ShConfig::default(),
            hidden_width: 64,
            density_layers: 2,
            color_layers: 3,
            thermal_layers: 2,
            appearance_dim: 32,
            num_appearance,
            temp_bounds,
            scene_box,
            proposal_nets: vec![ProposalNetConfig::default()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.sh.validate()?;
        self.scene_box.validate()?;
        for p in &self.proposal_nets {
            p.grid.validate()?;
            if p.hidden_width == 0 {
                return Err(Error::Config("proposal hidden width must be >= 1".into()));
            }
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden width must be >= 1".into()));
        }
        if self.density_layers < 2 || self.color_layers < 2 || self.thermal_layers < 2 {
            return Err(Error::Config("every network needs at least two layers".into()));
        }
        let [lo, hi] = self.temp_bounds;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!(
                "temperature bounds must satisfy t_min < t_max, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden_width
    }

    pub fn density_spec(&self) -> MlpSpec {
        let mut w = vec![self.grid.output_dim()];
        w.extend(std::iter::repeat_n(self.hidden_width, self.density_layers - 1));
        w.push(1);
        MlpSpec::new(w, OutputActivation::None)
    }

    pub fn color_spec(&self) -> MlpSpec {
        let mut w = vec![self.feature_dim() + self.sh.output_dim() + self.appearance_dim];
        w.extend(std::iter::repeat_n(self.hidden_width, self.color_layers - 1));
        w.push(self.mode.color_head_outputs());
        MlpSpec::new(w, OutputActivation::Sigmoid)
    }

    pub fn thermal_spec(&self) -> MlpSpec {
        let mut w = vec![self.feature_dim()];
        w.extend(std::iter::repeat_n(self.hidden_width, self.thermal_layers - 1));
        w.push(1);
        MlpSpec::new(w, OutputActivation::Sigmoid)
    }

    pub fn proposal_spec(&self, round: usize) -> MlpSpec {
        let p = &self.proposal_nets[round];
        MlpSpec::new(vec![p.grid.output_dim(), p.hidden_width, 1], OutputActivation::None)
    }

    pub fn temp_from_norm(&self, t_norm: f64) -> f64 {
        let [lo, hi] = self.temp_bounds;
        lo + t_norm * (hi - lo)
    }

    pub fn temp_to_norm(&self, t: f64) -> f64 {
        let [lo, hi] = self.temp_bounds;
        (t - lo) / (hi - lo)
    }
}

/// Where every parameter block lives in the [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldLayout {
    pub grid: ParamId,
    pub density: MlpParams,
    pub color: Option<MlpParams>,
    pub thermal: Option<MlpParams>,
    pub appearance: Option<ParamId>,
    pub bg_color: Option<ParamId>,
    pub bg_temp: Option<ParamId>,
    pub proposals: Vec<(ParamId, MlpParams)>,
}

impl FieldLayout {
    /// Parameter blocks that belong to the color head.
    pub fn color_params(&self) -> Vec<ParamId> {
        self.color.iter().flat_map(|m| m.ids()).collect()
    }

    pub fn thermal_params(&self) -> Vec<ParamId> {
        self.thermal.iter().flat_map(|m| m.ids()).collect()
    }

    pub fn density_params(&self) -> Vec<ParamId> {
        let mut v = vec![self.grid];
        v.extend(self.density.ids());
        v
    }
}

/// Initial background values (scene means), in [0,1] color and normalised
/// temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackgroundInit {
    pub color: [f64; 3],
    pub temp_norm: f64,
}

impl Default for BackgroundInit {
    fn default() -> Self {
        Self {
            color: [0.5; 3],
            temp_norm: 0.5,
        }
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Debug)]
pub struct FieldModel<T: Real> {
    pub config: FieldConfig,
    pub store: ParamStore<T>,
    pub layout: FieldLayout,
}

/// Tape handles of one batched field evaluation.
#[derive(Clone, Debug)]
pub struct FieldVars {
    pub sigma: Var,
    pub features: Var,
    /// `N x 3` in [0,1].
    pub color: Option<Var>,
    /// `N x 1` normalised temperature in [0,1].
    pub temp_norm: Option<Var>,
}

impl<T: Real> FieldModel<T> {
    pub fn new(config: FieldConfig, background: BackgroundInit, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let grid = store.add("grid", config.grid.param_count(), 1, init_table(&config.grid, rng));
        let density = config.density_spec().register(&mut store, "density", rng)?;
        let color = if config.mode == FieldMode::ThermalOnly || config.mode.has_rgb() {
            Some(config.color_spec().register(&mut store, "color", rng)?)
        } else {
            None
        };
        let appearance = (config.appearance_dim > 0).then(|| {
            let n = config.num_appearance;
            let d = config.appearance_dim;
            // Small symmetric init keeps the mean embedding near zero.
            let data = (0..n * d).map(|_| T::lit(rng.random_range(-0.01..0.01))).collect();
            store.add("appearance", n, d, data)
        });
        let bg_color = config.mode.has_rgb().then(|| {
            let data = background.color.iter().map(|c| T::lit(logit(*c))).collect();
            store.add("background.color", 1, 3, data)
        });
        let bg_temp = config
            .mode
            .has_thermal()
            .then(|| store.add("background.temp", 1, 1, vec![T::lit(logit(background.temp_norm))]));
        let mut proposals = Vec::new();
        for (i, p) in config.proposal_nets.iter().enumerate() {
            let g = store.add(
                format!("proposal{i}.grid"),
                p.grid.param_count(),
                1,
                init_table(&p.grid, rng),
            );
            let mlp = config
                .proposal_spec(i)
                .register(&mut store, &format!("proposal{i}.mlp"), rng)?;
            proposals.push((g, mlp));
        }
        // Registered last so the other blocks draw the same initial values in
        // every mode.
        let thermal = if config.mode == FieldMode::Thermo {
            Some(config.thermal_spec().register(&mut store, "thermal", rng)?)
        } else {
            None
        };
        Ok(Self {
            config,
            store,
            layout: FieldLayout {
                grid,
                density,
                color,
                thermal,
                appearance,
                bg_color,
                bg_temp,
                proposals,
            },
        })
    }

    pub fn mode(&self) -> FieldMode {
        self.config.mode
    }

    /// Same model at another precision.
    pub fn cast<U: Real>(&self) -> FieldModel<U> {
        FieldModel {
            config: self.config.clone(),
            store: self.store.cast(),
            layout: self.layout.clone(),
        }
    }

    fn check_appearance(&self, appearance: &[Option<usize>]) -> Result<()> {
        if let Some(bad) = appearance.iter().flatten().find(|a| **a >= self.config.num_appearance) {
            return Err(Error::Lookup(format!(
                "appearance index {bad} out of range ({} training frames)",
                self.config.num_appearance
            )));
        }
        Ok(())
    }

    /// Records the field on `positions` (`N x 3`, unit cube) for view
    /// directions `dirs` and per-sample appearance rows (`None` = mean).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        positions: Var,
        dirs: &[[f64; 3]],
        appearance: &[Option<usize>],
    ) -> Result<FieldVars> {
        let n = tape.shape(positions).0;
        if dirs.len() != n || appearance.len() != n {
            return Err(Error::Config(format!(
                "field forward got {n} positions, {} directions, {} appearance indices",
                dirs.len(),
                appearance.len()
            )));
        }
        self.check_appearance(appearance)?;
        let cfg = &self.config;
        let enc = record_hash_encode(tape, &self.store, self.layout.grid, &cfg.grid, positions)?;
        let dens = mlp_forward(tape, &self.store, &cfg.density_spec(), &self.layout.density, enc)?;
        let sigma = tape.softplus(dens.output);
        let features = *dens.hidden.last().expect("density network has a hidden layer");

        let head = match &self.layout.color {
            Some(params) => {
                let sh_dim = cfg.sh.output_dim();
                let mut sh = vec![T::zero(); n * sh_dim];
                for (i, d) in dirs.iter().enumerate() {
                    let dt = [T::lit(d[0]), T::lit(d[1]), T::lit(d[2])];
                    sh_encode(dt, cfg.sh, &mut sh[i * sh_dim..(i + 1) * sh_dim])?;
                }
                let sh = tape.input(n, sh_dim, sh);
                let mut parts = vec![features, sh];
                if let Some(app) = self.layout.appearance {
                    let table = tape.param(&self.store, app);
                    parts.push(tape.gather_rows(table, appearance.to_vec())?);
                }
                let input = tape.concat(&parts)?;
                Some(mlp_forward(tape, &self.store, &cfg.color_spec(), params, input)?.output)
            }
            None => None,
        };

        let (color, temp_norm) = match cfg.mode {
            FieldMode::Thermo => {
                let th = self.layout.thermal.as_ref().expect("thermo mode has a thermal head");
                let t = mlp_forward(tape, &self.store, &cfg.thermal_spec(), th, features)?.output;
                (head, Some(t))
            }
            FieldMode::RgbOnly => (head, None),
            FieldMode::ThermalOnly => (None, head),
            FieldMode::Concat4 => {
                let h = head.expect("concat4 has a color head");
                (Some(tape.slice_cols(h, 0, 3)?), Some(tape.slice_cols(h, 3, 1)?))
            }
        };
        Ok(FieldVars {
            sigma,
            features,
            color,
            temp_norm,
        })
    }

    /// Density of proposal network `round` at `positions` (`N x 3`, unit cube).
    pub fn proposal_density(&self, tape: &mut Tape<T>, round: usize, positions: Var) -> Result<Var> {
        let (grid, mlp) = self
            .layout
            .proposals
            .get(round)
            .ok_or_else(|| Error::Config(format!("no proposal network {round}")))?;
        let enc = record_hash_encode(
            tape,
            &self.store,
            *grid,
            &self.config.proposal_nets[round].grid,
            positions,
        )?;
        let out = mlp_forward(tape, &self.store, &self.config.proposal_spec(round), mlp, enc)?;
        Ok(tape.softplus(out.output))
    }

    /// Background color (`1 x 3`) and normalised temperature (`1 x 1`).
    pub fn background(&self, tape: &mut Tape<T>) -> (Option<Var>, Option<Var>) {
        let color = self.layout.bg_color.map(|id| {
            let p = tape.param(&self.store, id);
            tape.sigmoid(p)
        });
        let temp = self.layout.bg_temp.map(|id| {
            let p = tape.param(&self.store, id);
            tape.sigmoid(p)
        });
        (color, temp)
    }
}

/// Field value at a single point.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOutput<T> {
    pub sigma: T,
    pub features: Vec<T>,
    pub color: Option<[T; 3]>,
    /// Degrees Celsius.
    pub temp: Option<T>,
}

pub fn field_eval<T: Real>(
    model: &FieldModel<T>,
    x: [T; 3],
    d: [f64; 3],
    appearance: Option<usize>,
) -> Result<FieldOutput<T>> {
    let mut tape = Tape::new();
    let pos = tape.input(1, 3, x.to_vec());
    let vars = model.forward(&mut tape, pos, &[d], &[appearance])?;
    let [lo, hi] = model.config.temp_bounds;
    Ok(FieldOutput {
        sigma: tape.scalar(vars.sigma),
        features: tape.value(vars.features).to_vec(),
        color: vars.color.map(|c| {
            let v = tape.value(c);
            [v[0], v[1], v[2]]
        }),
        temp: vars.temp_norm.map(|t| T::lit(lo) + tape.scalar(t) * T::lit(hi - lo)),
    })
}
