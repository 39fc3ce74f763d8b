#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;
pub mod probes;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thermonerf::encodings::HashGridConfig;
use thermonerf::field::{BackgroundInit, FieldConfig, FieldMode, FieldModel};
use thermonerf::rendering::Aabb;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small field for tests that run many forward passes.
pub fn tiny_field_config(mode: FieldMode) -> FieldConfig {
    let mut cfg = FieldConfig::new(mode, 3, [0.0, 100.0], Aabb::new([-1.0; 3], [1.0; 3]).unwrap());
    cfg.grid = HashGridConfig {
        num_levels: 3,
        min_resolution: 2,
        max_resolution: 12,
        features_per_level: 2,
        table_size_log2: 10,
    };
    cfg.hidden_width = 8;
    cfg.appearance_dim = 3;
    cfg.proposal_nets[0].grid = HashGridConfig {
        num_levels: 2,
        min_resolution: 2,
        max_resolution: 8,
        features_per_level: 2,
        table_size_log2: 10,
    };
    cfg.proposal_nets[0].hidden_width = 6;
    cfg
}

pub fn tiny_model<T: thermonerf::real::Real>(mode: FieldMode, seed: u64) -> FieldModel<T> {
    FieldModel::new(tiny_field_config(mode), BackgroundInit::default(), &mut rng(seed)).unwrap()
}

/// Writes a line to stderr directly, so it shows even when the test
/// harness captures output.
pub fn note(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

/// Prints one acceptance line and returns whether it passed.
pub fn report(id: &str, pass: bool, detail: &str) -> bool {
    note(&format!(
        "[{}] criterion {id}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    ));
    pass
}
