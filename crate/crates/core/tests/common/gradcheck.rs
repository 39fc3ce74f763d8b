//! Central finite-difference checks of every differentiable building block,
//! run at 64 bit. Each suite draws randomized instances and reports the
//! worst relative error over the checked coordinates.

use rand::Rng;
use thermonerf::autodiff::{mlp_forward, Gradients, MlpSpec, OutputActivation, ParamId, ParamStore, Tape, Var};
use thermonerf::encodings::{record_hash_encode, HashGridConfig};
use thermonerf::field::{FieldMode, FieldModel};
use thermonerf::losses::{record_distortion, record_interlevel, record_mse};
use thermonerf::rendering::composite::{record_accumulation, record_blend, record_segment_sum, record_weights};
use thermonerf::rendering::{forward_rays, Ray, RayInput, SamplerConfig};
use thermonerf::trainer::{record_training_loss, ChunkTargets, TrainConfig};

use super::{rng, tiny_model};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const INSTANCES: usize = 50;

/// Relative error with a small absolute floor so that coordinates whose
/// derivative is zero are compared at round-off scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Clone, Debug)]
pub struct Summary {
    pub name: &'static str,
    pub instances: usize,
    pub coords: usize,
    pub max_rel_err: f64,
}

impl Summary {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            instances: 0,
            coords: 0,
            max_rel_err: 0.0,
        }
    }

    fn add(&mut self, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric);
        assert!(
            e.is_finite(),
            "{}: non-finite error ({analytic} vs {numeric})",
            self.name
        );
        self.coords += 1;
        self.max_rel_err = self.max_rel_err.max(e);
    }

    pub fn ok(&self) -> bool {
        self.instances >= INSTANCES && self.max_rel_err <= TOL
    }
}

/// Picks up to `n` coordinates of `grad`, favouring nonzero entries.
fn pick_coords(grad: &[f64], n: usize, r: &mut impl Rng) -> Vec<usize> {
    let nz: Vec<usize> = (0..grad.len()).filter(|i| grad[*i] != 0.0).collect();
    let mut out = Vec::new();
    for _ in 0..n.saturating_sub(2).min(nz.len()) {
        out.push(nz[r.random_range(0..nz.len())]);
    }
    while out.len() < n.min(grad.len()) {
        out.push(r.random_range(0..grad.len()));
    }
    out
}

fn central(f: &mut impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + H) - f(x - H)) / (2.0 * H)
}

/// Checks parameter gradients of `loss(store)` against central differences
/// on up to `n` coordinates of every group listed in `groups`.
type StoreLoss<'a> = dyn Fn(&ParamStore<f64>, Option<&mut Gradients<f64>>) -> f64 + 'a;
type LeafLoss<'a> = dyn Fn(&[f64], bool) -> (f64, Option<Vec<f64>>) + 'a;

fn check_params(
    summary: &mut Summary,
    store: &ParamStore<f64>,
    groups: &[ParamId],
    n: usize,
    r: &mut impl Rng,
    loss: &StoreLoss<'_>,
) {
    let mut grads = Gradients::zeros_like(store);
    loss(store, Some(&mut grads));
    let mut work = store.clone();
    for g in groups {
        let analytic = grads.get(*g).to_vec();
        for i in pick_coords(&analytic, n, r) {
            let x0 = work.get(*g).data[i];
            let num = central(
                &mut |x| {
                    work.get_mut(*g).data[i] = x;
                    loss(&work, None)
                },
                x0,
            );
            work.get_mut(*g).data[i] = x0;
            summary.add(analytic[i], num);
        }
    }
}

/// Checks the gradient with respect to a leaf input.
fn check_leaf(summary: &mut Summary, x: &[f64], n: usize, r: &mut impl Rng, loss: &LeafLoss<'_>) {
    let (_, g) = loss(x, true);
    let g = g.unwrap_or_else(|| vec![0.0; x.len()]);
    let mut work = x.to_vec();
    for i in pick_coords(&g, n, r) {
        let x0 = work[i];
        let num = central(
            &mut |v| {
                work[i] = v;
                loss(&work, false).0
            },
            x0,
        );
        work[i] = x0;
        summary.add(g[i], num);
    }
}

fn random_vec(r: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Projects a node onto fixed random coefficients so any output becomes a scalar.
fn project(tape: &mut Tape<f64>, v: Var, coef: &[f64]) -> Var {
    let (rows, cols) = tape.shape(v);
    let c = tape.input(rows, cols, coef.to_vec());
    let m = tape.mul(v, c).unwrap();
    tape.sum(m)
}

fn backward(tape: &mut Tape<f64>, root: Var, store: &ParamStore<f64>, grads: Option<&mut Gradients<f64>>) {
    let mut scratch;
    let g = match grads {
        Some(g) => g,
        None => {
            scratch = Gradients::zeros_like(store);
            &mut scratch
        }
    };
    tape.backward(root, 1.0, store, g).unwrap();
}

/// Random unit-cube point at least 1e-4 away from every grid line of `cfg`.
fn off_grid_point(cfg: &HashGridConfig, r: &mut impl Rng) -> [f64; 3] {
    loop {
        let x = [r.random::<f64>(), r.random::<f64>(), r.random::<f64>()];
        let clear = cfg.levels().iter().all(|l| {
            x.iter().all(|v| {
                let p = v * l.resolution as f64;
                (p - p.round()).abs() > 1e-4 * l.resolution as f64
            })
        });
        if clear {
            return x;
        }
    }
}

pub fn hash_encode_suite(seed: u64) -> Summary {
    let mut s = Summary::new("hash_encode");
    let mut r = rng(seed);
    for inst in 0..INSTANCES {
        let cfg = HashGridConfig {
            num_levels: r.random_range(1..4),
            min_resolution: r.random_range(2..5),
            max_resolution: r.random_range(6..20),
            features_per_level: r.random_range(1..3),
            // Small tables force hash collisions.
            table_size_log2: if inst % 2 == 0 { 4 } else { 10 },
        };
        let mut store = ParamStore::new();
        let table = store.add(
            "grid",
            cfg.param_count(),
            1,
            random_vec(&mut r, cfg.param_count(), -1.0, 1.0),
        );
        let npts = r.random_range(1..4);
        let pts: Vec<f64> = (0..npts).flat_map(|_| off_grid_point(&cfg, &mut r)).collect();
        let coef = random_vec(&mut r, npts * cfg.output_dim(), -1.0, 1.0);
        let eval = |store: &ParamStore<f64>, pts: &[f64], grads: Option<&mut Gradients<f64>>| {
            let mut tape = Tape::new();
            let x = tape.leaf(npts, 3, pts.to_vec());
            let enc = record_hash_encode(&mut tape, store, table, &cfg, x).unwrap();
            let l = project(&mut tape, enc, &coef);
            let v = tape.scalar(l);
            backward(&mut tape, l, store, grads);
            (v, tape.grad(x).map(|g| g.to_vec()))
        };
        check_params(&mut s, &store, &[table], 8, &mut r, &|st, g| eval(st, &pts, g).0);
        check_leaf(&mut s, &pts, 6, &mut r, &|p, _| eval(&store, p, None));
        s.instances += 1;
    }
    s
}

/// One MLP shape per head of the field, with randomized widths.
fn mlp_shapes(r: &mut impl Rng) -> Vec<(&'static str, MlpSpec)> {
    let h = r.random_range(2..9);
    let grid = r.random_range(2..9);
    let app = r.random_range(0..4);
    vec![
        ("density", MlpSpec::new(vec![grid, h, 1], OutputActivation::None)),
        (
            "color",
            MlpSpec::new(vec![h + 16 + app, h, h, 3], OutputActivation::Sigmoid),
        ),
        ("thermal", MlpSpec::new(vec![h, h, 1], OutputActivation::Sigmoid)),
        ("proposal", MlpSpec::new(vec![grid, h, 1], OutputActivation::None)),
    ]
}

pub fn mlp_suite(seed: u64) -> Summary {
    let mut s = Summary::new("mlp");
    let mut r = rng(seed);
    for _ in 0..INSTANCES {
        for (name, spec) in mlp_shapes(&mut r) {
            let mut store = ParamStore::new();
            let params = spec.register(&mut store, name, &mut r).unwrap();
            // Non-zero biases so every unit is exercised.
            for id in params.ids() {
                store
                    .get_mut(id)
                    .data
                    .iter_mut()
                    .for_each(|v| *v += r.random_range(-0.3..0.3));
            }
            let rows = r.random_range(1..4);
            let input = random_vec(&mut r, rows * spec.input_dim(), -1.0, 1.0);
            let coef = random_vec(&mut r, rows * spec.output_dim(), -1.0, 1.0);
            let eval = |store: &ParamStore<f64>, x: &[f64], grads: Option<&mut Gradients<f64>>| {
                let mut tape = Tape::new();
                let xv = tape.leaf(rows, spec.input_dim(), x.to_vec());
                let out = mlp_forward(&mut tape, store, &spec, &params, xv).unwrap().output;
                let out = if name == "density" || name == "proposal" {
                    tape.softplus(out)
                } else {
                    out
                };
                let l = project(&mut tape, out, &coef);
                let v = tape.scalar(l);
                backward(&mut tape, l, store, grads);
                (v, tape.grad(xv).map(|g| g.to_vec()))
            };
            let ids: Vec<ParamId> = params.ids().collect();
            check_params(&mut s, &store, &ids, 3, &mut r, &|st, g| eval(st, &input, g).0);
            check_leaf(&mut s, &input, 4, &mut r, &|x, _| eval(&store, x, None));
        }
        s.instances += 1;
    }
    s
}

pub fn composite_suite(seed: u64) -> Summary {
    let mut s = Summary::new("composite");
    let mut r = rng(seed);
    for _ in 0..INSTANCES {
        let rays = r.random_range(1..4);
        let mut offsets = vec![0];
        for _ in 0..rays {
            let n = r.random_range(1..7);
            offsets.push(offsets.last().unwrap() + n);
        }
        let n = *offsets.last().unwrap();
        let c = r.random_range(1..4);
        let deltas = random_vec(&mut r, n, 0.01, 0.5);
        let sigma = random_vec(&mut r, n, 0.0, 5.0);
        let values = random_vec(&mut r, n * c, 0.0, 1.0);
        let bg = random_vec(&mut r, c, 0.0, 1.0);
        let coef = random_vec(&mut r, rays * c, -1.0, 1.0);
        let coef_acc = random_vec(&mut r, rays, -1.0, 1.0);
        let store = ParamStore::<f64>::new();
        // x = [sigma | values | background]
        let x: Vec<f64> = sigma.iter().chain(&values).chain(&bg).copied().collect();
        let eval = |x: &[f64], _: bool| {
            let mut tape = Tape::new();
            let sg = tape.leaf(n, 1, x[..n].to_vec());
            let vv = tape.leaf(n, c, x[n..n + n * c].to_vec());
            let bv = tape.leaf(1, c, x[n + n * c..].to_vec());
            let w = record_weights(&mut tape, sg, deltas.clone(), offsets.clone()).unwrap();
            let acc = record_accumulation(&mut tape, w, &offsets);
            let summed = record_segment_sum(&mut tape, w, vv, &offsets).unwrap();
            let out = record_blend(&mut tape, summed, acc, bv).unwrap();
            let a = project(&mut tape, out, &coef);
            let b = project(&mut tape, acc, &coef_acc);
            let l = tape.weighted_sum(&[(a, 1.0), (b, 1.0)]).unwrap();
            let v = tape.scalar(l);
            backward(&mut tape, l, &store, None);
            let mut g = Vec::with_capacity(x.len());
            for leaf in [sg, vv, bv] {
                let len = tape.shape(leaf).0 * tape.shape(leaf).1;
                g.extend(tape.grad(leaf).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; len]));
            }
            (v, Some(g))
        };
        check_leaf(&mut s, &x, 10, &mut r, &eval);
        s.instances += 1;
    }
    s
}

/// MSE (plain and masked), distortion and interlevel as tape ops.
pub fn loss_suite(seed: u64) -> Summary {
    let mut s = Summary::new("losses");
    let mut r = rng(seed);
    for _ in 0..INSTANCES {
        // MSE, with and without a mask.
        let n = r.random_range(1..10);
        let pred = random_vec(&mut r, n, 0.0, 1.0);
        let target = random_vec(&mut r, n, 0.0, 1.0);
        let mask: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.7).collect();
        for masked in [false, true] {
            let eval = |x: &[f64], _: bool| {
                let mut tape = Tape::new();
                let p = tape.leaf(n, 1, x.to_vec());
                let l = record_mse(&mut tape, p, target.clone(), masked.then(|| mask.clone()), 3.0).unwrap();
                let v = tape.scalar(l);
                backward(&mut tape, l, &ParamStore::new(), None);
                (v, tape.grad(p).map(|g| g.to_vec()))
            };
            check_leaf(&mut s, &pred, 4, &mut r, &eval);
        }

        // Distortion over packed rays.
        let rays = r.random_range(1..4);
        let mut offsets = vec![0];
        let mut edges = Vec::new();
        for _ in 0..rays {
            let k = r.random_range(1..8);
            let mut e = random_vec(&mut r, k + 1, 0.0, 1.0);
            e.sort_by(|a, b| a.partial_cmp(b).unwrap());
            edges.extend(e);
            offsets.push(offsets.last().unwrap() + k);
        }
        let w = random_vec(&mut r, *offsets.last().unwrap(), 0.0, 0.5);
        let scale = r.random_range(0.1..2.0);
        let eval = |x: &[f64], _: bool| {
            let mut tape = Tape::new();
            let wv = tape.leaf(x.len(), 1, x.to_vec());
            let l = record_distortion(&mut tape, wv, edges.clone(), offsets.clone(), scale).unwrap();
            let v = tape.scalar(l);
            backward(&mut tape, l, &ParamStore::new(), None);
            (v, tape.grad(wv).map(|g| g.to_vec()))
        };
        check_leaf(&mut s, &w, 6, &mut r, &eval);

        // Interlevel against fixed targets.
        let p = random_vec(&mut r, w.len(), 0.0, 0.5);
        let targets = random_vec(&mut r, w.len(), 0.0, 0.5);
        let eps = 1e-3;
        let eval = |x: &[f64], _: bool| {
            let mut tape = Tape::new();
            let pv = tape.leaf(x.len(), 1, x.to_vec());
            let l = record_interlevel(&mut tape, pv, targets.clone(), offsets.clone(), eps, scale).unwrap();
            let v = tape.scalar(l);
            backward(&mut tape, l, &ParamStore::new(), None);
            (v, tape.grad(pv).map(|g| g.to_vec()))
        };
        check_leaf(&mut s, &p, 6, &mut r, &eval);
        s.instances += 1;
    }
    s
}

fn random_rays(model: &FieldModel<f64>, r: &mut impl Rng, n: usize) -> Vec<RayInput> {
    (0..n)
        .map(|_| {
            let origin = [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), -3.0];
            let d: [f64; 3] = [r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), 1.0];
            let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let ray = Ray {
                origin,
                direction: [d[0] / len, d[1] / len, d[2] / len],
                near: 0.0,
                far: 0.0,
            };
            RayInput {
                ray: model.config.scene_box.bound_ray(ray, 0.05),
                appearance: if r.random::<f64>() < 0.8 {
                    Some(r.random_range(0..model.config.num_appearance))
                } else {
                    None
                },
            }
        })
        .collect()
}

fn small_sampler() -> SamplerConfig {
    SamplerConfig {
        proposal_samples: vec![10],
        final_samples: 6,
        eps_pdf: 0.01,
        near_plane: 0.05,
    }
}

/// Perturbs every parameter a little so no block sits at its initial value.
fn jiggle(model: &mut FieldModel<f64>, r: &mut impl Rng) {
    for g in model.store.groups_mut() {
        for v in g.data.iter_mut() {
            *v += 0.2 * (r.random::<f64>() - 0.5);
        }
    }
}

/// The training objective of a ray batch through sampling, field,
/// compositing, photometric and distortion terms, differentiated with
/// respect to the scene-field parameters. Sample placement depends only on
/// the proposal networks, so it is fixed under these perturbations. The
/// interlevel term is left out here: its targets are detached copies of the
/// final weights, so a finite difference would see them move while the
/// analytic gradient (correctly) does not. It has its own suite below.
pub fn pipeline_suite(seed: u64) -> Summary {
    let mut s = Summary::new("pipeline");
    let mut r = rng(seed);
    let modes = [
        FieldMode::Thermo,
        FieldMode::RgbOnly,
        FieldMode::ThermalOnly,
        FieldMode::Concat4,
    ];
    let mut cfg = TrainConfig::synth_tiny();
    cfg.sampler = small_sampler();
    cfg.loss.lambda_interl = 0.0;
    for inst in 0..INSTANCES {
        let mode = modes[inst % modes.len()];
        let mut model = tiny_model::<f64>(mode, seed ^ inst as u64);
        jiggle(&mut model, &mut r);
        let count = r.random_range(1..4);
        let rays = random_rays(&model, &mut r, count);
        let n = rays.len();
        let rgb: Vec<f32> = (0..3 * n).map(|_| r.random::<f32>()).collect();
        let temp = random_vec(&mut r, n, 0.0, 1.0);
        let valid: Vec<bool> = (0..n).map(|k| k == 0 || r.random::<f64>() < 0.7).collect();
        let nvalid = valid.iter().filter(|v| **v).count();
        let loss = |store: &ParamStore<f64>, grads: Option<&mut Gradients<f64>>| {
            let mut m = model.clone();
            m.store = store.clone();
            let mut tape = Tape::new();
            let fwd = forward_rays(&m, &mut tape, &rays, &cfg.sampler, None).unwrap();
            let targets = ChunkTargets {
                rgb: &rgb,
                temp_norm: &temp,
                valid: &valid,
                rays_in_batch: n as f64 + 1.0,
                valid_in_batch: nvalid,
            };
            let (_, l) = record_training_loss(&mut tape, &fwd, &targets, &cfg).unwrap();
            let v = tape.scalar(l);
            backward(&mut tape, l, store, grads);
            v
        };
        let mut groups: Vec<ParamId> = model.layout.density_params();
        groups.extend(model.layout.color_params());
        groups.extend(model.layout.thermal_params());
        groups.extend(model.layout.appearance);
        groups.extend(model.layout.bg_color);
        groups.extend(model.layout.bg_temp);
        check_params(&mut s, &model.store, &groups, 2, &mut r, &loss);
        s.instances += 1;
    }
    s
}

/// Interlevel objective through the proposal network, with the final-pass
/// histogram held fixed.
pub fn proposal_suite(seed: u64) -> Summary {
    let mut s = Summary::new("proposal");
    let mut r = rng(seed);
    let sampler = small_sampler();
    for inst in 0..INSTANCES {
        let mut model = tiny_model::<f64>(FieldMode::Thermo, seed ^ (1000 + inst as u64));
        jiggle(&mut model, &mut r);
        let count = r.random_range(1..4);
        let rays = random_rays(&model, &mut r, count);
        let total: usize = rays.len() * sampler.proposal_samples[0];
        let targets = random_vec(&mut r, total, 0.0, 0.4);
        let loss = |store: &ParamStore<f64>, grads: Option<&mut Gradients<f64>>| {
            let mut m = model.clone();
            m.store = store.clone();
            let mut tape = Tape::new();
            let fwd = forward_rays(&m, &mut tape, &rays, &sampler, None).unwrap();
            let pass = &fwd.proposal_passes[0];
            let l = record_interlevel(
                &mut tape,
                pass.weights,
                targets.clone(),
                pass.offsets.clone(),
                1e-3,
                0.7,
            )
            .unwrap();
            let v = tape.scalar(l);
            backward(&mut tape, l, store, grads);
            v
        };
        let (g, mlp) = &model.layout.proposals[0];
        let mut groups = vec![*g];
        groups.extend(mlp.ids());
        check_params(&mut s, &model.store, &groups, 3, &mut r, &loss);
        s.instances += 1;
    }
    s
}

pub fn all_suites(seed: u64) -> Vec<Summary> {
    vec![
        hash_encode_suite(seed),
        mlp_suite(seed + 1),
        composite_suite(seed + 2),
        loss_suite(seed + 3),
        pipeline_suite(seed + 4),
        proposal_suite(seed + 5),
    ]
}
