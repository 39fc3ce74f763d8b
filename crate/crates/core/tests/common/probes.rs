//! Shared random inputs for the decoupling and dataset checks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thermonerf::autodiff::{Gradients, ParamId, Tape};
use thermonerf::dataset::ThermalMap;
use thermonerf::field::{field_eval, FieldModel};
use thermonerf::losses::record_mse;
use thermonerf::rendering::{forward_rays, Ray, RayInput, SamplerConfig};

pub fn sampler() -> SamplerConfig {
    SamplerConfig {
        proposal_samples: vec![12],
        final_samples: 8,
        ..SamplerConfig::default()
    }
}

/// Rays looking down +z through the unit box with random appearance rows.
pub fn rays(model: &FieldModel<f64>, r: &mut impl Rng, n: usize) -> Vec<RayInput> {
    (0..n)
        .map(|_| {
            let origin = [r.random_range(-0.4..0.4), r.random_range(-0.4..0.4), -3.0];
            let d: [f64; 3] = [r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), 1.0];
            let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ray = Ray {
                origin,
                direction: d.map(|v| v / len),
                near: 0.0,
                far: 0.0,
            };
            RayInput {
                ray: model.config.scene_box.bound_ray(ray, 0.05),
                appearance: Some(r.random_range(0..model.config.num_appearance)),
            }
        })
        .collect()
}

/// Moves every parameter off its initial value.
pub fn jiggle(model: &mut FieldModel<f64>, r: &mut impl Rng) {
    for g in model.store.groups_mut() {
        g.data.iter_mut().for_each(|v| *v += 0.3 * (r.random::<f64>() - 0.5));
    }
}

/// Gradients of one photometric term alone over a random batch.
pub fn term_grads(model: &FieldModel<f64>, batch: &[RayInput], thermal: bool, r: &mut impl Rng) -> Gradients<f64> {
    let mut tape = Tape::new();
    let fwd = forward_rays(model, &mut tape, batch, &sampler(), Some(&mut super::rng(r.random()))).unwrap();
    let n = batch.len();
    let l = if thermal {
        let target = (0..n).map(|_| r.random()).collect();
        record_mse(&mut tape, fwd.temp_norm.unwrap(), target, None, n as f64).unwrap()
    } else {
        let target = (0..3 * n).map(|_| r.random()).collect();
        record_mse(&mut tape, fwd.color.unwrap(), target, None, 3.0 * n as f64).unwrap()
    };
    let mut grads = Gradients::zeros_like(&model.store);
    tape.backward(l, 1.0, &model.store, &mut grads).unwrap();
    grads
}

pub fn all_zero(grads: &Gradients<f64>, ids: &[ParamId]) -> bool {
    ids.iter().all(|id| grads.is_all_zero(*id))
}

/// Evaluates the field at `x` under `n` random directions and appearance
/// rows and checks that density and temperature keep the same bits.
pub fn temperature_is_view_invariant(model: &FieldModel<f64>, x: [f64; 3], n: usize, r: &mut impl Rng) -> bool {
    let base = field_eval(model, x, [0.0, 0.0, 1.0], None).unwrap();
    (0..n).all(|_| {
        let d: [f64; 3] = [
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        ];
        let len = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let app = r
            .random_bool(0.8)
            .then(|| r.random_range(0..model.config.num_appearance));
        let out = field_eval(model, x, d.map(|v| v / len), app).unwrap();
        out.temp.unwrap().to_bits() == base.temp.unwrap().to_bits() && out.sigma.to_bits() == base.sigma.to_bits()
    })
}

/// True when each photometric term leaves the other head's parameters
/// exactly untouched and does reach its own head.
pub fn heads_are_separate(model: &FieldModel<f64>, batch: &[RayInput], r: &mut impl Rng) -> bool {
    let l = &model.layout;
    let th = term_grads(model, batch, true, r);
    let rgb = term_grads(model, batch, false, r);
    all_zero(&th, &l.color_params())
        && all_zero(&th, &[l.appearance.unwrap(), l.bg_color.unwrap()])
        && !all_zero(&th, &l.thermal_params())
        && all_zero(&rgb, &l.thermal_params())
        && all_zero(&rgb, &[l.bg_temp.unwrap()])
        && !all_zero(&rgb, &l.color_params())
}

/// Stack of `k` frames of a static scene with i.i.d. Gaussian read noise.
pub fn noisy_stack(k: usize, sigma: f64, seed: u64) -> Vec<ThermalMap> {
    let mut r = super::rng(seed);
    let (w, h) = (64u32, 48u32);
    let scene: Vec<f64> = (0..w * h).map(|p| 20.0 + (p % w) as f64 * 0.1).collect();
    let noise = Normal::new(0.0, sigma).unwrap();
    (0..k)
        .map(|_| ThermalMap::new(w, h, scene.iter().map(|t| t + noise.sample(&mut r)).collect()).unwrap())
        .collect()
}
