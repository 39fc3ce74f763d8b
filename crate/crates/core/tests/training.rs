mod common;

use std::path::Path;

use thermonerf::dataset::{generate_synthetic_scene, load_scene, SceneDataset, SynthSceneSpec};
use thermonerf::field::FieldMode;
use thermonerf::trainer::{
    numbered_checkpoint, schedule_of, Checkpoint, StepRecord, TrainConfig, Trainer, CHECKPOINT_FILE, LOG_FILE,
};

fn scene(dir: &Path) -> SceneDataset {
    let spec = SynthSceneSpec::hot_sphere(16, 6, vec![5]);
    generate_synthetic_scene(&spec, 0, dir).unwrap();
    load_scene(dir).unwrap()
}

fn tiny(iterations: u64) -> TrainConfig {
    let mut cfg = TrainConfig::synth_tiny();
    cfg.iterations = iterations;
    cfg.threads = 1;
    cfg
}

fn read_log(dir: &Path) -> Vec<StepRecord> {
    std::fs::read_to_string(dir.join(LOG_FILE))
        .unwrap()
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect()
}

fn param_bits(t: &Trainer) -> Vec<u32> {
    t.model
        .store
        .groups()
        .iter()
        .flat_map(|g| g.data.iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn one_iteration_is_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let data = scene(&dir.path().join("scene"));
    let out = dir.path().join("run");
    let mut t = Trainer::new(tiny(1), data).unwrap();
    let before = param_bits(&t);
    t.run(Some(&out)).unwrap();
    assert_ne!(before, param_bits(&t));
    let ck = Checkpoint::load(&out.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.iteration(), 1);
    assert_eq!(ck.optimizer.step, 1);
    assert_eq!(read_log(&out).len(), 1);
}

#[test]
fn same_seed_gives_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = scene(&dir.path().join("scene"));
    let run = |threads: usize| {
        let mut cfg = tiny(8);
        cfg.threads = threads;
        cfg.chunk_rays = 16;
        let mut t = Trainer::new(cfg, data.clone()).unwrap();
        let rec = t.run(None).unwrap().unwrap();
        (rec.loss.to_bits(), param_bits(&t))
    };
    let a = run(1);
    assert_eq!(a, run(1));
    // Chunk gradients are summed in a fixed order, so workers do not matter.
    assert_eq!(a, run(3));
    let mut cfg = tiny(8);
    cfg.seed = 99;
    let mut t = Trainer::new(cfg, data).unwrap();
    assert_ne!(t.run(None).unwrap().unwrap().loss.to_bits(), a.0);
}

#[test]
fn resume_equals_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = scene(&dir.path().join("scene"));
    let mut cfg = tiny(12);
    cfg.checkpoint_every = 5;
    let full_dir = dir.path().join("full");
    let mut full = Trainer::new(cfg.clone(), data.clone()).unwrap();
    full.run(Some(&full_dir)).unwrap();

    let ck = Checkpoint::load(&numbered_checkpoint(&full_dir, 5)).unwrap();
    assert_eq!(ck.iteration(), 5);
    let mut resumed = Trainer::from_checkpoint(ck, data.clone()).unwrap();
    resumed.run(None).unwrap();
    assert_eq!(resumed.iteration, 12);
    assert_eq!(param_bits(&resumed), param_bits(&full));
    assert_eq!(resumed.rng, full.rng);
    assert_eq!(resumed.optimizer, full.optimizer);

    // Stopping early with run_until and continuing in process is the same.
    let mut split = Trainer::new(cfg, data).unwrap();
    split.run_until(None, 7).unwrap();
    let ck = Checkpoint::from_bytes(&split.checkpoint().to_bytes().unwrap()).unwrap();
    let mut rest = Trainer::from_checkpoint(ck, split.data.clone()).unwrap();
    rest.run(None).unwrap();
    assert_eq!(param_bits(&rest), param_bits(&full));
}

#[test]
fn logged_learning_rate_follows_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let data = scene(&dir.path().join("scene"));
    for warmup in [0, 3] {
        let total = 10;
        let mut cfg = tiny(total);
        cfg.warmup_steps = warmup;
        let out = dir.path().join(format!("w{warmup}"));
        Trainer::new(cfg.clone(), data.clone())
            .unwrap()
            .run(Some(&out))
            .unwrap();
        let log = read_log(&out);
        assert_eq!(log.len(), total as usize);
        // Record `iter = k` is the update taken at optimizer step k - 1.
        for step in [0, total / 2, total - 1] {
            let frac = step as f64 / total as f64;
            let mut want = cfg.base_lr * (cfg.final_lr / cfg.base_lr).powf(frac);
            if step < warmup {
                want *= cfg.warmup_factor;
            }
            let got = log[step as usize].lr;
            assert!((got - want).abs() <= 1e-12 * want, "step {step}: {got} vs {want}");
        }
        let end = schedule_of(&cfg).lr(total);
        assert!((end - cfg.final_lr).abs() <= 1e-12 * cfg.final_lr);
    }
}

/// RGB-only training with no thermal weight follows exactly the same RGB
/// loss trajectory as the full model with its thermal head frozen out.
#[test]
fn rgb_baseline_matches_thermo_without_thermal_supervision() {
    let dir = tempfile::tempdir().unwrap();
    let data = scene(&dir.path().join("scene"));
    let run = |mode: FieldMode| {
        let mut cfg = tiny(10);
        cfg.mode = mode;
        cfg.loss.lambda_t = 0.0;
        let out = dir.path().join(format!("{mode:?}"));
        let mut t = Trainer::new(cfg, data.clone()).unwrap();
        t.run(Some(&out)).unwrap();
        let thermal_ids = t.model.layout.thermal_params();
        let bits: Vec<u64> = read_log(&out).iter().map(|r| r.rgb.to_bits()).collect();
        (bits, t, thermal_ids)
    };
    let (rgb_only, _, _) = run(FieldMode::RgbOnly);
    let (thermo, trained, thermal_ids) = run(FieldMode::Thermo);
    assert_eq!(rgb_only, thermo);
    // The thermal head never received a gradient.
    let fresh = Trainer::new(
        TrainConfig {
            mode: FieldMode::Thermo,
            ..tiny(10)
        },
        data,
    )
    .unwrap();
    for id in thermal_ids {
        assert_eq!(trained.model.store.get(id).data, fresh.model.store.get(id).data);
    }
}

#[test]
fn every_mode_trains_and_reduces_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = scene(&dir.path().join("scene"));
    for mode in [
        FieldMode::Thermo,
        FieldMode::RgbOnly,
        FieldMode::ThermalOnly,
        FieldMode::Concat4,
    ] {
        let mut cfg = tiny(30);
        cfg.mode = mode;
        if mode == FieldMode::RgbOnly {
            cfg.loss.lambda_t = 0.0;
        }
        let out = dir.path().join(format!("m{mode:?}"));
        Trainer::new(cfg, data.clone()).unwrap().run(Some(&out)).unwrap();
        let log = read_log(&out);
        let head: f64 = log[..5].iter().map(|r| r.loss).sum();
        let tail: f64 = log[log.len() - 5..].iter().map(|r| r.loss).sum();
        assert!(tail < head, "{mode:?}: {head} -> {tail}");
    }
}
