//! Volume-rendering quadrature.
//!
//! For optical depths `tau_i = sigma_i * delta_i`:
//! `alpha_i = 1 - exp(-tau_i)`, `T_i = exp(-sum_{j<i} tau_j)`, `w_i = T_i alpha_i`.
//! The rendered value is `sum_i w_i v_i + (1 - sum_i w_i) v_bg`.

use crate::autodiff::tape::{BackwardCtx, CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rendering::samplers::RaySamples;

/// Compositing weights for one ray.
pub fn render_weights<T: Real>(sigma: &[T], deltas: &[T], weights: &mut [T]) -> Result<()> {
    if sigma.len() != deltas.len() || weights.len() != sigma.len() {
        return Err(Error::Config("render_weights length mismatch".into()));
    }
    let mut optical_depth = T::zero();
    for i in 0..sigma.len() {
        let s = sigma[i];
        if !(s >= T::zero()) {
            return Err(Error::Domain(format!("density must be non-negative, got {s}")));
        }
        let tau = s * deltas[i];
        let trans = (-optical_depth).exp();
        weights[i] = trans * -(-tau).exp_m1();
        optical_depth += tau;
    }
    Ok(())
}

/// Accumulates `d_sigma` given the weight adjoints `d_w`.
///
/// With `tau_k = sigma_k delta_k`:
/// `dL/dtau_k = g_k T_{k+1} - sum_{i>k} g_i w_i`.
pub fn render_weights_backward<T: Real>(sigma: &[T], deltas: &[T], weights: &[T], d_w: &[T], d_sigma: &mut [T]) {
    let n = sigma.len();
    let mut suffix = T::zero();
    // Transmittance after each sample, accumulated front to back first.
    let mut trans_after = vec![T::zero(); n];
    let mut od = T::zero();
    for i in 0..n {
        od += sigma[i] * deltas[i];
        trans_after[i] = (-od).exp();
    }
    for k in (0..n).rev() {
        let d_tau = d_w[k] * trans_after[k] - suffix;
        d_sigma[k] += d_tau * deltas[k];
        suffix += d_w[k] * weights[k];
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite<T> {
    pub value: Vec<T>,
    pub weights: Vec<T>,
    pub depth: f64,
    pub accumulation: T,
}

/// Composites per-sample `values` (`len x channels`, row-major) over
/// `background` along one ray.
pub fn composite<T: Real>(samples: &RaySamples, sigma: &[T], values: &[T], background: &[T]) -> Result<Composite<T>> {
    let n = samples.len();
    let c = background.len();
    if sigma.len() != n || values.len() != n * c {
        return Err(Error::Config(format!(
            "composite expects {n} samples x {c} channels, got {} densities and {} values",
            sigma.len(),
            values.len()
        )));
    }
    let deltas: Vec<T> = samples.deltas().map(T::lit).collect();
    let mut weights = vec![T::zero(); n];
    render_weights(sigma, &deltas, &mut weights)?;
    let acc: T = weights.iter().copied().sum();
    let mut value: Vec<T> = background.iter().map(|b| (T::one() - acc) * *b).collect();
    for i in 0..n {
        for k in 0..c {
            value[k] += weights[i] * values[i * c + k];
        }
    }
    let acc_f = acc.to_f64_lossy();
    let depth = if acc_f > 0.0 {
        samples
            .centers()
            .zip(&weights)
            .map(|(t, w)| t * w.to_f64_lossy())
            .sum::<f64>()
            / acc_f
    } else {
        *samples.edges.last().unwrap()
    };
    Ok(Composite {
        value,
        weights,
        depth,
        accumulation: acc,
    })
}

// ---------------------------------------------------------------------------
// Tape adapters. Rays are packed back to back; `offsets[r]..offsets[r+1]`
// indexes the samples of ray `r`.

struct RenderWeightsOp<T> {
    deltas: Vec<T>,
    offsets: Vec<usize>,
}

impl<T: Real> CustomOp<T> for RenderWeightsOp<T> {
    fn name(&self) -> &'static str {
        "render_weights"
    }

    fn backward(&self, mut ctx: BackwardCtx<'_, T>) {
        let sigma = ctx.inputs[0];
        if let Some(ds) = ctx.input_grads[0].as_deref_mut() {
            for r in self.offsets.windows(2) {
                let (a, b) = (r[0], r[1]);
                render_weights_backward(
                    &sigma[a..b],
                    &self.deltas[a..b],
                    &ctx.output[a..b],
                    &ctx.out_grad[a..b],
                    &mut ds[a..b],
                );
            }
        }
    }
}

/// Records per-sample weights (`N x 1`) from densities (`N x 1`).
pub fn record_weights<T: Real>(tape: &mut Tape<T>, sigma: Var, deltas: Vec<T>, offsets: Vec<usize>) -> Result<Var> {
    let n = tape.shape(sigma).0;
    if deltas.len() != n || *offsets.last().unwrap_or(&0) != n {
        return Err(Error::Config(
            "weights op: offsets/deltas do not cover the samples".into(),
        ));
    }
    let mut w = vec![T::zero(); n];
    {
        let s = tape.value(sigma);
        for r in offsets.windows(2) {
            render_weights(&s[r[0]..r[1]], &deltas[r[0]..r[1]], &mut w[r[0]..r[1]])?;
        }
    }
    Ok(tape.custom(vec![sigma], n, 1, w, Box::new(RenderWeightsOp { deltas, offsets })))
}

struct SegmentSumOp {
    offsets: Vec<usize>,
    channels: usize,
}

impl<T: Real> CustomOp<T> for SegmentSumOp {
    fn name(&self) -> &'static str {
        "segment_weighted_sum"
    }

    fn backward(&self, mut ctx: BackwardCtx<'_, T>) {
        let c = self.channels;
        let (w, v) = (ctx.inputs[0], ctx.inputs[1]);
        let g = ctx.out_grad;
        let (first, rest) = ctx.input_grads.split_at_mut(1);
        let (dw, dv) = (first[0].as_deref_mut(), rest[0].as_deref_mut());
        if let Some(dw) = dw {
            for (r, seg) in self.offsets.windows(2).enumerate() {
                for i in seg[0]..seg[1] {
                    let mut acc = T::zero();
                    for k in 0..c {
                        acc += g[r * c + k] * v[i * c + k];
                    }
                    dw[i] += acc;
                }
            }
        }
        if let Some(dv) = dv {
            for (r, seg) in self.offsets.windows(2).enumerate() {
                for i in seg[0]..seg[1] {
                    for k in 0..c {
                        dv[i * c + k] += g[r * c + k] * w[i];
                    }
                }
            }
        }
    }
}

/// Per-ray `sum_i w_i v_i` (`R x C`).
pub fn record_segment_sum<T: Real>(tape: &mut Tape<T>, weights: Var, values: Var, offsets: &[usize]) -> Result<Var> {
    let (n, c) = tape.shape(values);
    if tape.shape(weights) != (n, 1) || *offsets.last().unwrap_or(&0) != n {
        return Err(Error::Config("segment sum shape mismatch".into()));
    }
    let rays = offsets.len() - 1;
    let mut out = vec![T::zero(); rays * c];
    {
        let (w, v) = (tape.value(weights), tape.value(values));
        for (r, seg) in offsets.windows(2).enumerate() {
            for i in seg[0]..seg[1] {
                for k in 0..c {
                    out[r * c + k] += w[i] * v[i * c + k];
                }
            }
        }
    }
    Ok(tape.custom(
        vec![weights, values],
        rays,
        c,
        out,
        Box::new(SegmentSumOp {
            offsets: offsets.to_vec(),
            channels: c,
        }),
    ))
}

struct SegmentTotalOp {
    offsets: Vec<usize>,
}

impl<T: Real> CustomOp<T> for SegmentTotalOp {
    fn name(&self) -> &'static str {
        "segment_total"
    }

    fn backward(&self, mut ctx: BackwardCtx<'_, T>) {
        if let Some(dw) = ctx.input_grads[0].as_deref_mut() {
            for (r, seg) in self.offsets.windows(2).enumerate() {
                for d in &mut dw[seg[0]..seg[1]] {
                    *d += ctx.out_grad[r];
                }
            }
        }
    }
}

/// Per-ray accumulated opacity `sum_i w_i` (`R x 1`).
pub fn record_accumulation<T: Real>(tape: &mut Tape<T>, weights: Var, offsets: &[usize]) -> Var {
    let w = tape.value(weights);
    let out: Vec<T> = offsets
        .windows(2)
        .map(|s| w[s[0]..s[1]].iter().copied().sum())
        .collect();
    let rays = out.len();
    tape.custom(
        vec![weights],
        rays,
        1,
        out,
        Box::new(SegmentTotalOp {
            offsets: offsets.to_vec(),
        }),
    )
}

struct BlendOp;

impl<T: Real> CustomOp<T> for BlendOp {
    fn name(&self) -> &'static str {
        "blend_background"
    }

    fn backward(&self, mut ctx: BackwardCtx<'_, T>) {
        let (acc, bg) = (ctx.inputs[1], ctx.inputs[2]);
        let c = bg.len();
        let g = ctx.out_grad;
        let rays = acc.len();
        if let Some(dr) = ctx.input_grads[0].as_deref_mut() {
            for (d, s) in dr.iter_mut().zip(g) {
                *d += *s;
            }
        }
        if let Some(da) = ctx.input_grads[1].as_deref_mut() {
            for r in 0..rays {
                for k in 0..c {
                    da[r] -= g[r * c + k] * bg[k];
                }
            }
        }
        if let Some(db) = ctx.input_grads[2].as_deref_mut() {
            for r in 0..rays {
                for k in 0..c {
                    db[k] += g[r * c + k] * (T::one() - acc[r]);
                }
            }
        }
    }
}

/// `rendered + (1 - acc) * background` per ray.
pub fn record_blend<T: Real>(tape: &mut Tape<T>, rendered: Var, acc: Var, background: Var) -> Result<Var> {
    let (rays, c) = tape.shape(rendered);
    if tape.shape(acc) != (rays, 1) || tape.shape(background) != (1, c) {
        return Err(Error::Config("background blend shape mismatch".into()));
    }
    let out = {
        let (v, a, b) = (tape.value(rendered), tape.value(acc), tape.value(background));
        (0..rays * c).map(|i| v[i] + (T::one() - a[i / c]) * b[i % c]).collect()
    };
    Ok(tape.custom(vec![rendered, acc, background], rays, c, out, Box::new(BlendOp)))
}
