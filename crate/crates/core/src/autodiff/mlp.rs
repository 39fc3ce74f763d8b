use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::params::{ParamId, ParamStore};
use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    None,
    Sigmoid,
}

/// Fully connected network: `layer_widths = [in, hidden.., out]`, ReLU between
/// layers. A "2-layer" network has widths `[in, h, out]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub output_activation: OutputActivation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpParams {
    /// (weight `in x out`, bias `1 x out`) per layer.
    pub layers: Vec<(ParamId, ParamId)>,
}

impl MlpParams {
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|(w, b)| [*w, *b])
    }
}

#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub output: Var,
    /// Post-activation hidden layers, first to last.
    pub hidden: Vec<Var>,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, output_activation: OutputActivation) -> Self {
        Self {
            layer_widths,
            output_activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::Config(format!(
                "an MLP needs at least one hidden layer, widths {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Config("MLP widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Registers weights with uniform fan-in scaled init, zero biases.
    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, prefix: &str, rng: &mut impl Rng) -> Result<MlpParams> {
        self.validate()?;
        let layers = self
            .layer_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| T::lit(rng.random_range(-bound..bound)))
                    .collect();
                let wid = store.add(format!("{prefix}.{i}.weight"), fan_in, fan_out, weights);
                let bid = store.add(format!("{prefix}.{i}.bias"), 1, fan_out, vec![T::zero(); fan_out]);
                (wid, bid)
            })
            .collect();
        Ok(MlpParams { layers })
    }
}

/// Records `affine -> relu -> ... -> affine [-> sigmoid]` on the tape.
pub fn mlp_forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    spec: &MlpSpec,
    params: &MlpParams,
    input: Var,
) -> Result<MlpTrace> {
    spec.validate()?;
    if params.layers.len() != spec.layer_widths.len() - 1 {
        return Err(Error::Config(format!(
            "MLP has {} parameter layers but spec describes {}",
            params.layers.len(),
            spec.layer_widths.len() - 1
        )));
    }
    if tape.shape(input).1 != spec.input_dim() {
        return Err(Error::Config(format!(
            "MLP input has {} columns, spec expects {}",
            tape.shape(input).1,
            spec.input_dim()
        )));
    }
    for ((w, b), dims) in params.layers.iter().zip(spec.layer_widths.windows(2)) {
        let (g, bg) = (store.get(*w), store.get(*b));
        if (g.rows, g.cols) != (dims[0], dims[1]) || (bg.rows, bg.cols) != (1, dims[1]) {
            return Err(Error::Config(format!(
                "parameter `{}` is {}x{}, expected {}x{}",
                g.name, g.rows, g.cols, dims[0], dims[1]
            )));
        }
    }
    let mut h = input;
    let mut hidden = Vec::with_capacity(params.layers.len() - 1);
    let last = params.layers.len() - 1;
    for (i, (w, b)) in params.layers.iter().enumerate() {
        let wv = tape.param(store, *w);
        let bv = tape.param(store, *b);
        let z = tape.linear(h, wv, bv)?;
        if i < last {
            h = tape.relu(z);
            hidden.push(h);
        } else {
            h = match spec.output_activation {
                OutputActivation::None => z,
                OutputActivation::Sigmoid => tape.sigmoid(z),
            };
        }
    }
    Ok(MlpTrace { output: h, hidden })
}
