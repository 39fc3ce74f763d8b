//! Repeatability of a thermal camera from a stack of frames of a static scene.

use crate::dataset::thermal::ThermalMap;
use crate::error::{Error, Result};

/// Mean over pixels valid in every frame of the per-pixel sample standard
/// deviation (divisor `K - 1`).
pub fn estimate_precision(stack: &[ThermalMap]) -> Result<f64> {
    if stack.len() < 2 {
        return Err(Error::Domain(format!(
            "precision needs at least 2 frames, got {}",
            stack.len()
        )));
    }
    let first = &stack[0];
    if stack.iter().any(|m| !m.same_shape(first)) {
        return Err(Error::Domain("precision frames differ in shape".into()));
    }
    let k = stack.len() as f64;
    let mut sum_sd = 0.0;
    let mut count = 0usize;
    for p in 0..first.len() {
        if !stack.iter().all(|m| m.valid[p]) {
            continue;
        }
        let mean = stack.iter().map(|m| m.temps[p]).sum::<f64>() / k;
        let var = stack.iter().map(|m| (m.temps[p] - mean).powi(2)).sum::<f64>() / (k - 1.0);
        sum_sd += var.sqrt();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Domain("no pixel is valid in every frame".into()));
    }
    Ok(sum_sd / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: f64) -> ThermalMap {
        ThermalMap::new(3, 2, vec![v; 6]).unwrap()
    }

    #[test]
    fn identical_frames_give_zero() {
        assert_eq!(estimate_precision(&[flat(20.0), flat(20.0), flat(20.0)]).unwrap(), 0.0);
    }

    #[test]
    fn two_frames_one_degree_apart() {
        let p = estimate_precision(&[flat(20.0), flat(21.0)]).unwrap();
        assert!((p - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn single_frame_is_domain_error() {
        assert!(matches!(estimate_precision(&[flat(1.0)]), Err(Error::Domain(_))));
    }
}
