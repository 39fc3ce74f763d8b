//! Training objective: photometric and thermal MSE, the distortion
//! regulariser and the proposal (interlevel) bound.
//!
//! `total = lambda_r * L_rgb + lambda_t * L_th + L_dist + L_interl`, where the
//! distortion and interlevel terms carry their internal weights
//! (`lambda_dist`, `lambda_interl`) already.

use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{BackwardCtx, CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_t: f64,
    /// Internal scale of the distortion term.
    pub lambda_dist: f64,
    /// Internal scale of the interlevel term.
    pub lambda_interl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_r: 1.0,
            lambda_t: 1.0,
            lambda_dist: 0.002,
            lambda_interl: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_r, self.lambda_t, self.lambda_dist, self.lambda_interl];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!(
                "loss weights must be finite and >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// The four loss terms; `distortion` and `interlevel` include their internal weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub rgb: f64,
    pub thermal: f64,
    pub distortion: f64,
    pub interlevel: f64,
}

pub fn total_loss(parts: &LossParts, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [
        ("rgb", parts.rgb),
        ("thermal", parts.thermal),
        ("distortion", parts.distortion),
        ("interlevel", parts.interlevel),
    ] {
        if !v.is_finite() {
            return Err(Error::training(name, format!("loss term is {v}")));
        }
    }
    Ok(weights.lambda_r * parts.rgb + weights.lambda_t * parts.thermal + parts.distortion + parts.interlevel)
}

/// Mean over rays and channels of the squared color error.
pub fn loss_rgb<T: Real>(pred: &[T], gt: &[T]) -> Result<T> {
    if pred.len() != gt.len() {
        return Err(Error::Config("rgb loss: prediction/target length mismatch".into()));
    }
    if pred.is_empty() {
        return Err(Error::Domain("rgb loss over an empty batch".into()));
    }
    let sse: T = pred.iter().zip(gt).map(|(p, g)| (*p - *g) * (*p - *g)).sum();
    Ok(sse / T::from_usize(pred.len()).unwrap())
}

/// Masked mean squared error over normalised temperatures. A batch without
/// valid pixels contributes 0.
pub fn loss_thermal<T: Real>(pred: &[T], gt: &[T], mask: &[bool]) -> Result<T> {
    if pred.len() != gt.len() || mask.len() != pred.len() {
        return Err(Error::Config("thermal loss: length mismatch".into()));
    }
    let valid = mask.iter().filter(|m| **m).count();
    if valid == 0 {
        log::warn!("thermal loss skipped: no valid thermal pixels in batch");
        return Ok(T::zero());
    }
    let sse: T = pred
        .iter()
        .zip(gt)
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|((p, g), _)| (*p - *g) * (*p - *g))
        .sum();
    Ok(sse / T::from_usize(valid).unwrap())
}

/// Distortion of one ray: `sum_ij w_i w_j |m_i - m_j| + 1/3 sum_i w_i^2 ds_i`
/// over bins with edges `s_edges` (normalised ray coordinate), in O(N).
pub fn loss_distortion<T: Real>(weights: &[T], s_edges: &[T]) -> T {
    let n = weights.len();
    debug_assert_eq!(s_edges.len(), n + 1);
    let third = T::lit(1.0 / 3.0);
    let two = T::lit(2.0);
    let mut w_before = T::zero();
    let mut ws_before = T::zero();
    let mut inter = T::zero();
    let mut intra = T::zero();
    for i in 0..n {
        let mid = (s_edges[i] + s_edges[i + 1]) * T::lit(0.5);
        let ds = s_edges[i + 1] - s_edges[i];
        let w = weights[i];
        inter += two * w * (mid * w_before - ws_before);
        intra += third * w * w * ds;
        w_before += w;
        ws_before += w * mid;
    }
    inter + intra
}

/// Adds `scale * dL/dw` of [`loss_distortion`] into `d_w`.
pub fn loss_distortion_grad<T: Real>(weights: &[T], s_edges: &[T], scale: T, d_w: &mut [T]) {
    let n = weights.len();
    let mids: Vec<T> = (0..n).map(|i| (s_edges[i] + s_edges[i + 1]) * T::lit(0.5)).collect();
    let w_total: T = weights.iter().copied().sum();
    let ws_total: T = weights.iter().zip(&mids).map(|(w, m)| *w * *m).sum();
    let mut w_before = T::zero();
    let mut ws_before = T::zero();
    for k in 0..n {
        let w_after = w_total - w_before - weights[k];
        let ws_after = ws_total - ws_before - weights[k] * mids[k];
        let spread = mids[k] * w_before - ws_before + (ws_after - mids[k] * w_after);
        let ds = s_edges[k + 1] - s_edges[k];
        d_w[k] += scale * (T::lit(2.0) * spread + T::lit(2.0 / 3.0) * weights[k] * ds);
        w_before += weights[k];
        ws_before += weights[k] * mids[k];
    }
}

/// Redistributes a histogram over `src_edges` onto `dst_edges`, splitting each
/// source bin's mass in proportion to interval overlap.
pub fn resample_histogram(src_edges: &[f64], src_mass: &[f64], dst_edges: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; dst_edges.len() - 1];
    let mut j = 0;
    for (i, m) in src_mass.iter().enumerate() {
        let (a, b) = (src_edges[i], src_edges[i + 1]);
        if *m == 0.0 || b <= a {
            continue;
        }
        while j + 1 < dst_edges.len() - 1 && dst_edges[j + 1] <= a {
            j += 1;
        }
        let mut k = j;
        while k < out.len() && dst_edges[k] < b {
            let lo = a.max(dst_edges[k]);
            let hi = b.min(dst_edges[k + 1]);
            if hi > lo {
                out[k] += m * (hi - lo) / (b - a);
            }
            k += 1;
        }
    }
    out
}

/// Interlevel penalty for one ray on the proposal's bins:
/// `sum_b max(0, f_b - p_b)^2 / (p_b + eps)`.
pub fn loss_interlevel<T: Real>(final_on_prop: &[T], proposal: &[T], eps: T) -> Result<T> {
    if final_on_prop.len() != proposal.len() {
        return Err(Error::State("interlevel histograms use different bin edges".into()));
    }
    Ok(final_on_prop
        .iter()
        .zip(proposal)
        .map(|(f, p)| {
            let excess = (*f - *p).max(T::zero());
            excess * excess / (*p + eps)
        })
        .sum())
}

fn interlevel_grad<T: Real>(final_on_prop: &[T], proposal: &[T], eps: T, scale: T, d_p: &mut [T]) {
    for ((f, p), d) in final_on_prop.iter().zip(proposal).zip(d_p.iter_mut()) {
        let excess = *f - *p;
        if excess > T::zero() {
            let den = *p + eps;
            *d += scale * (-T::lit(2.0) * excess / den - excess * excess / (den * den));
        }
    }
}

// ---------------------------------------------------------------------------
// Tape adapters. Each records a scalar already divided by the batch-wide
// normaliser so partial batches can be summed.

struct MseOp<T> {
    target: Vec<T>,
    mask: Option<Vec<bool>>,
    scale: T,
}

impl<T: Real> CustomOp<T> for MseOp<T> {
    fn name(&self) -> &'static str {
        "mse"
    }

    fn backward(&self, mut ctx: BackwardCtx<'_, T>) {
        let g = ctx.out_grad[0] * self.scale * T::lit(2.0);
        let pred = ctx.inputs[0];
        if let Some(dp) = ctx.input_grads[0].as_deref_mut() {
            for i in 0..pred.len() {
                if self.mask.as_ref().is_none_or(|m| m[i]) {
                    dp[i] += g * (pred[i] - self.target[i]);
                }
            }
        }
    }
}

/// `sum_i mask_i (pred_i - target_i)^2 / denom` as a 1x1 node.
pub fn record_mse<T: Real>(
    tape: &mut Tape<T>,
    pred: Var,
    target: Vec<T>,
    mask: Option<Vec<bool>>,
    denom: f64,
) -> Result<Var> {
    let p = tape.value(pred);
    if p.len() != target.len() || mask.as_ref().is_some_and(|m| m.len() != p.len()) {
        return Err(Error::Config("mse op: length mismatch".into()));
    }
    if !(denom > 0.0) {
        return Err(Error::Domain("mse op: normaliser must be positive".into()));
    }
    let scale = T::lit(1.0 / denom);
    let sse: T = p
        .iter()
        .zip(&target)
        .enumerate()
        .filter(|(i, _)| mask.as_ref().is_none_or(|m| m[*i]))
        .map(|(_, (a, b))| (*a - *b) * (*a - *b))
        .sum();
    Ok(tape.custom(
        vec![pred],
        1,
        1,
        vec![sse * scale],
        Box::new(MseOp { target, mask, scale }),
    ))
}

struct DistortionOp<T> {
    s_edges: Vec<T>,
    offsets: Vec<usize>,
    scale: T,
}

impl<T: Real> CustomOp<T> for DistortionOp<T> {
    fn name(&self) -> &'static str {
        "distortion"
    }

    fn backward(&self, mut ctx: BackwardCtx<'_, T>) {
        let w = ctx.inputs[0];
        let scale = ctx.out_grad[0] * self.scale;
        if let Some(dw) = ctx.input_grads[0].as_deref_mut() {
            for (r, seg) in self.offsets.windows(2).enumerate() {
                let e0 = seg[0] + r;
                loss_distortion_grad(
                    &w[seg[0]..seg[1]],
                    &self.s_edges[e0..e0 + seg[1] - seg[0] + 1],
                    scale,
                    &mut dw[seg[0]..seg[1]],
                );
            }
        }
    }
}

/// `scale * sum_rays distortion(ray)`; `s_edges` packs `n_r + 1` edges per ray.
pub fn record_distortion<T: Real>(
    tape: &mut Tape<T>,
    weights: Var,
    s_edges: Vec<T>,
    offsets: Vec<usize>,
    scale: f64,
) -> Result<Var> {
    let rays = offsets.len() - 1;
    if s_edges.len() != tape.shape(weights).0 + rays {
        return Err(Error::Config("distortion op: edge count mismatch".into()));
    }
    let w = tape.value(weights);
    let mut total = T::zero();
    for (r, seg) in offsets.windows(2).enumerate() {
        let e0 = seg[0] + r;
        total += loss_distortion(&w[seg[0]..seg[1]], &s_edges[e0..e0 + seg[1] - seg[0] + 1]);
    }
    let scale = T::lit(scale);
    Ok(tape.custom(
        vec![weights],
        1,
        1,
        vec![total * scale],
        Box::new(DistortionOp {
            s_edges,
            offsets,
            scale,
        }),
    ))
}

struct InterlevelOp<T> {
    targets: Vec<T>,
    offsets: Vec<usize>,
    eps: T,
    scale: T,
}

impl<T: Real> CustomOp<T> for InterlevelOp<T> {
    fn name(&self) -> &'static str {
        "interlevel"
    }

    fn backward(&self, mut ctx: BackwardCtx<'_, T>) {
        let p = ctx.inputs[0];
        let scale = ctx.out_grad[0] * self.scale;
        if let Some(dp) = ctx.input_grads[0].as_deref_mut() {
            for seg in self.offsets.windows(2) {
                let r = seg[0]..seg[1];
                interlevel_grad(&self.targets[r.clone()], &p[r.clone()], self.eps, scale, &mut dp[r]);
            }
        }
    }
}

/// `scale * sum_rays interlevel(ray)`; `targets` are the (detached) final
/// weights already resampled onto the proposal bins.
pub fn record_interlevel<T: Real>(
    tape: &mut Tape<T>,
    proposal_weights: Var,
    targets: Vec<T>,
    offsets: Vec<usize>,
    eps: f64,
    scale: f64,
) -> Result<Var> {
    let p = tape.value(proposal_weights);
    if p.len() != targets.len() {
        return Err(Error::State("interlevel op: histogram sizes differ".into()));
    }
    let eps = T::lit(eps);
    let mut total = T::zero();
    for seg in offsets.windows(2) {
        total += loss_interlevel(&targets[seg[0]..seg[1]], &p[seg[0]..seg[1]], eps)?;
    }
    let scale = T::lit(scale);
    Ok(tape.custom(
        vec![proposal_weights],
        1,
        1,
        vec![total * scale],
        Box::new(InterlevelOp {
            targets,
            offsets,
            eps,
            scale,
        }),
    ))
}
