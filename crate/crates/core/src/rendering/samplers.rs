//! Interval partitions along rays.
//!
//! Partitions are built in a normalised spacing coordinate `s` in [0, 1]:
//! the first half of `s` is linear in distance over `[near, mid]`, the second
//! half is linear in disparity (1/distance) over `[mid, far]`, with
//! `mid = (near + far) / 2`. Distortion regularisation uses the same `s`.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::rendering::camera::{Ray, Vec3};
use crate::rendering::composite::render_weights;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spacing {
    pub near: f64,
    pub far: f64,
}

impl Spacing {
    pub fn new(ray: &Ray) -> Self {
        Self {
            near: ray.near,
            far: ray.far,
        }
    }

    fn mid(&self) -> f64 {
        self.near + 0.5 * (self.far - self.near)
    }

    pub fn to_t(&self, s: f64) -> f64 {
        let mid = self.mid();
        if s <= 0.0 {
            self.near
        } else if s >= 1.0 {
            self.far
        } else if s <= 0.5 {
            self.near + 2.0 * s * (mid - self.near)
        } else {
            1.0 / (1.0 / mid + (2.0 * s - 1.0) * (1.0 / self.far - 1.0 / mid))
        }
    }

    pub fn to_s(&self, t: f64) -> f64 {
        let mid = self.mid();
        if t <= self.near {
            0.0
        } else if t >= self.far {
            1.0
        } else if t <= mid {
            0.5 * (t - self.near) / (mid - self.near)
        } else {
            0.5 + 0.5 * (1.0 / t - 1.0 / mid) / (1.0 / self.far - 1.0 / mid)
        }
    }
}

/// Sorted interval edges along one ray, in distance and spacing coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub edges: Vec<f64>,
    pub s_edges: Vec<f64>,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.edges.len() < 2
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1]))
    }

    pub fn deltas(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.windows(2).map(|w| w[1] - w[0])
    }

    pub fn s_centers(&self) -> impl Iterator<Item = f64> + '_ {
        self.s_edges.windows(2).map(|w| 0.5 * (w[0] + w[1]))
    }

    pub fn s_deltas(&self) -> impl Iterator<Item = f64> + '_ {
        self.s_edges.windows(2).map(|w| w[1] - w[0])
    }

    fn from_s(spacing: &Spacing, s_edges: Vec<f64>) -> Self {
        let edges = s_edges.iter().map(|s| spacing.to_t(*s)).collect();
        Self { edges, s_edges }
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.edges.windows(2).all(|w| w[1] > w[0])
    }
}

/// Shortens the trait-object lifetime so an optional rng can be lent out twice.
pub(crate) fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

fn check_ray(ray: &Ray) -> Result<()> {
    if !(ray.near > 0.0 && ray.far > ray.near && ray.far.is_finite()) {
        return Err(Error::Domain(format!(
            "ray interval must satisfy 0 < near < far, got [{}, {}]",
            ray.near, ray.far
        )));
    }
    Ok(())
}

/// `n` bins uniform in spacing coordinate. Without an rng the edges sit at
/// `s = k/n`; with one, each interior edge is jittered uniformly between the
/// midpoints of its neighbouring bins.
pub fn sample_stratified(ray: &Ray, n: usize, rng: Option<&mut dyn RngCore>) -> Result<RaySamples> {
    if n < 2 {
        return Err(Error::Domain(format!("stratified sampling needs n >= 2, got {n}")));
    }
    check_ray(ray)?;
    let spacing = Spacing::new(ray);
    let base: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let s_edges = match rng {
        None => base,
        Some(rng) => {
            let mut s = base.clone();
            for k in 1..n {
                let lo = 0.5 * (base[k - 1] + base[k]);
                let hi = 0.5 * (base[k] + base[k + 1]);
                s[k] = lo + (hi - lo) * rng.random::<f64>();
            }
            s
        }
    };
    Ok(RaySamples::from_s(&spacing, s_edges))
}

/// Inverse-CDF resampling of `n` bins from the piecewise-constant density
/// defined by `weights` over `prior`, mixed with a uniform floor of mass
/// `eps_pdf`. Falls back to [`sample_stratified`] when the weights carry no mass.
pub fn resample_from_weights(
    ray: &Ray,
    prior: &RaySamples,
    weights: &[f64],
    n: usize,
    eps_pdf: f64,
    rng: Option<&mut dyn RngCore>,
) -> Result<RaySamples> {
    if n < 2 {
        return Err(Error::Domain(format!("resampling needs n >= 2, got {n}")));
    }
    if weights.len() != prior.len() {
        return Err(Error::Config(format!(
            "{} weights for {} prior bins",
            weights.len(),
            prior.len()
        )));
    }
    check_ray(ray)?;
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    if !(total > 0.0) || !total.is_finite() {
        return sample_stratified(ray, n, rng);
    }
    let spacing = Spacing::new(ray);
    let s_span = prior.s_edges[prior.len()] - prior.s_edges[0];
    let mut cdf = Vec::with_capacity(weights.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for (w, ds) in weights.iter().zip(prior.s_deltas()) {
        acc += (1.0 - eps_pdf) * w.max(0.0) / total + eps_pdf * ds / s_span;
        cdf.push(acc);
    }
    let norm = acc;
    cdf.iter_mut().for_each(|c| *c /= norm);
    let mut us = Vec::with_capacity(n + 1);
    us.push(0.0);
    match rng {
        None => us.extend((1..n).map(|k| k as f64 / n as f64)),
        Some(rng) => us.extend((1..n).map(|k| (k as f64 - 0.5 + rng.random::<f64>()) / n as f64)),
    }
    us.push(1.0);
    let mut s_edges = Vec::with_capacity(n + 1);
    let mut bin = 0;
    for (k, u) in us.iter().enumerate() {
        if k == 0 {
            s_edges.push(prior.s_edges[0]);
            continue;
        }
        if k == n {
            s_edges.push(prior.s_edges[prior.len()]);
            continue;
        }
        while bin + 1 < prior.len() && cdf[bin + 1] <= *u {
            bin += 1;
        }
        let (c0, c1) = (cdf[bin], cdf[bin + 1]);
        let frac = if c1 > c0 {
            ((u - c0) / (c1 - c0)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let s = prior.s_edges[bin] + frac * (prior.s_edges[bin + 1] - prior.s_edges[bin]);
        s_edges.push(s);
    }
    // Guard against rounding collapsing two neighbouring edges.
    for k in 1..s_edges.len() {
        if s_edges[k] <= s_edges[k - 1] {
            s_edges[k] = s_edges[k - 1] + 1e-12;
        }
    }
    let last = s_edges.len() - 1;
    if s_edges[last] <= s_edges[last - 1] {
        s_edges[last - 1] = 0.5 * (s_edges[last - 2] + s_edges[last]);
    }
    Ok(RaySamples::from_s(&spacing, s_edges))
}

/// Result of one proposal pass.
#[derive(Clone, Debug)]
pub struct ProposalSamples {
    pub proposal: RaySamples,
    pub proposal_weights: Vec<f64>,
    pub samples: RaySamples,
}

/// Evaluates `density` at the centres of a stratified partition of `n_init`
/// bins, composites weights, and resamples `n_final` bins from them.
pub fn sample_proposal(
    ray: &Ray,
    density: &dyn Fn(&[Vec3]) -> Result<Vec<f64>>,
    n_init: usize,
    n_final: usize,
    eps_pdf: f64,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<ProposalSamples> {
    let proposal = sample_stratified(ray, n_init, reborrow(&mut rng))?;
    let points: Vec<Vec3> = proposal.centers().map(|t| ray.at(t)).collect();
    let sigma = density(&points)?;
    let deltas: Vec<f64> = proposal.deltas().collect();
    let mut weights = vec![0.0; sigma.len()];
    render_weights(&sigma, &deltas, &mut weights)?;
    let samples = resample_from_weights(ray, &proposal, &weights, n_final, eps_pdf, rng)?;
    Ok(ProposalSamples {
        proposal,
        proposal_weights: weights,
        samples,
    })
}
