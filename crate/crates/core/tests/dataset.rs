mod common;

use common::probes::noisy_stack;

use proptest::prelude::*;
use rand::Rng;
use thermonerf::dataset::{
    clamp_thermal, dequantize, estimate_precision, frame_batch, generate_synthetic_scene, load_scene, load_scene_with,
    quantize, read_thermal_png, render_analytic, sample_ray_batch, write_thermal_png, LoadOptions, SceneManifest,
    Split, SynthSceneSpec, ThermalMap,
};
use thermonerf::Error;

#[test]
fn precision_recovers_sensor_noise() {
    let stack = noisy_stack(20, 0.14, 1);
    let est = estimate_precision(&stack).unwrap();
    assert!((est - 0.14).abs() / 0.14 < 0.05, "{est}");
}

#[test]
fn precision_matches_two_pass_recomputation() {
    let stack = noisy_stack(7, 0.3, 2);
    let n = stack[0].len();
    let mut sum = 0.0;
    for p in 0..n {
        let v: Vec<f64> = stack.iter().map(|m| m.temps[p]).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        sum += (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
    }
    assert!((estimate_precision(&stack).unwrap() - sum / n as f64).abs() < 1e-12);
}

#[test]
fn precision_skips_pixels_invalid_in_any_frame() {
    let mut stack = noisy_stack(5, 0.2, 3);
    stack[2].temps[0] = 1e6;
    stack[2].valid[0] = false;
    let est = estimate_precision(&stack).unwrap();
    assert!(est < 1.0);
    assert!(matches!(estimate_precision(&stack[..1]), Err(Error::Domain(_))));
}

proptest! {
    #[test]
    fn quantization_error_is_at_most_half_a_step(t_min in -50.0f64..50.0, span in 1.0f64..200.0, x in 0.0f64..1.0) {
        let t_max = t_min + span;
        let t = t_min + x * span;
        let back = dequantize(quantize(t, t_min, t_max), t_min, t_max);
        prop_assert!((back - t).abs() <= 0.5 * span / 65535.0 * (1.0 + 1e-9));
    }

    #[test]
    fn out_of_range_readings_saturate(t_min in -50.0f64..50.0, span in 1.0f64..200.0) {
        prop_assert_eq!(quantize(t_min - 10.0, t_min, t_min + span), 0);
        prop_assert_eq!(quantize(t_min + span + 10.0, t_min, t_min + span), u16::MAX);
    }

    #[test]
    fn clamping_is_idempotent(v in prop::collection::vec(-80.0f64..150.0, 1..64), floor in -40.0f64..0.0) {
        let m = ThermalMap::new(v.len() as u32, 1, v).unwrap();
        let once = clamp_thermal(&m, floor);
        prop_assert!(once.temps.iter().all(|t| *t >= floor));
        prop_assert_eq!(&clamp_thermal(&once, floor), &once);
    }
}

#[test]
fn thermal_png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(4);
    let (lo, hi) = (-20.0, 120.0);
    let m = ThermalMap::new(17, 9, (0..153).map(|_| r.random_range(lo..hi)).collect()).unwrap();
    let path = dir.path().join("t.png");
    write_thermal_png(&m, lo, hi, &path).unwrap();
    let back = read_thermal_png(&path, lo, hi).unwrap();
    let q = (hi - lo) / 65535.0;
    assert!(m
        .temps
        .iter()
        .zip(&back.temps)
        .all(|(a, b)| (a - b).abs() <= 0.5 * q * (1.0 + 1e-9)));
}

fn synth_scene(dir: &std::path::Path) -> SynthSceneSpec {
    let spec = SynthSceneSpec::hot_sphere(16, 6, vec![4, 5]);
    generate_synthetic_scene(&spec, 0, dir).unwrap();
    spec
}

#[test]
fn synthetic_scene_loads_back_to_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let spec = synth_scene(dir.path());
    let raw = LoadOptions {
        prefer_raw: true,
        ..LoadOptions::default()
    };
    for opts in [raw, LoadOptions::default()] {
        let data = load_scene_with(dir.path(), &opts).unwrap();
        assert_eq!(data.frames.len(), 6);
        assert_eq!(data.indices(Split::Test), vec![4, 5]);
        assert_eq!(data.num_train(), 4);
        let q = (spec.temp_bounds[1] - spec.temp_bounds[0]) / 65535.0;
        for f in &data.frames {
            let gt = render_analytic(&spec, &f.camera).unwrap();
            let worst = gt
                .temps
                .iter()
                .zip(&f.thermal.temps)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 0.5 * q * (1.0 + 1e-9) + 1e-9, "{worst}");
            let rgb_worst = gt
                .rgb
                .iter()
                .zip(&f.rgb)
                .map(|(a, b)| (a - *b as f64).abs())
                .fold(0.0, f64::max);
            assert!(rgb_worst <= 0.5 / 255.0 + 1e-6);
        }
    }
}

#[test]
fn loader_rejects_unpaired_frames() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    let (manifest, _) = SceneManifest::read(dir.path()).unwrap();
    std::fs::remove_file(dir.path().join(&manifest.frames[2].thermal_path)).unwrap();
    match load_scene(dir.path()) {
        Err(Error::Dataset(msg)) => assert!(msg.contains("thermal"), "{msg}"),
        other => panic!("expected a dataset error, got {other:?}"),
    }
}

#[test]
fn loader_rejects_mismatched_sizes() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    let (manifest, _) = SceneManifest::read(dir.path()).unwrap();
    let small = ThermalMap::new(8, 8, vec![20.0; 64]).unwrap();
    write_thermal_png(
        &small,
        manifest.t_min,
        manifest.t_max,
        &dir.path().join(&manifest.frames[1].thermal_path),
    )
    .unwrap();
    assert!(matches!(load_scene(dir.path()), Err(Error::Dataset(_))));
}

#[test]
fn ray_batches_draw_only_training_pixels() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    let data = load_scene(dir.path()).unwrap();
    let mut r = common::rng(5);
    let b = sample_ray_batch(&data, 500, &mut r);
    assert_eq!(b.len(), 500);
    assert!(b.appearance.iter().all(|a| *a < 4));
    assert_eq!(b.rgb.len(), 1500);
    assert!(b.temp_norm.iter().all(|t| (0.0..=1.0).contains(t)));
    let full = frame_batch(&data, 0);
    assert_eq!(full.len(), 256);
}

#[test]
fn downscaling_preserves_projection_and_means() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    let data = load_scene(dir.path()).unwrap();
    let half = data.downscale(2).unwrap();
    let mut r = common::rng(6);
    for (a, b) in data.frames.iter().zip(&half.frames) {
        assert_eq!((b.camera.width, b.thermal.width, b.rgb.len()), (8, 8, 192));
        for _ in 0..10 {
            let p = [
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            ];
            let (u, v) = a.camera.project(p).unwrap();
            let (us, vs) = b.camera.project(p).unwrap();
            assert!((u - 2.0 * us).abs() < 1e-9 && (v - 2.0 * vs).abs() < 1e-9);
        }
        let mean = |t: &[f64]| t.iter().sum::<f64>() / t.len() as f64;
        assert!((mean(&a.thermal.temps) - mean(&b.thermal.temps)).abs() < 1e-9);
    }
    assert!(data.downscale(0).is_err());
    assert!(data.downscale(17).is_err());
}
