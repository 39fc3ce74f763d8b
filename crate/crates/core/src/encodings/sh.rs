//! Real spherical harmonics without the Condon-Shortley phase.
//!
//! Component ordering is l-major with m running from -l to l:
//! index = l*l + (m + l). For m < 0 the basis uses sin(|m| phi), for m > 0
//! cos(m phi). This is the layout checkpoints depend on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

pub const MAX_SH_DEGREE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShConfig {
    /// Number of bands; the encoding has `degree * degree` components.
    pub degree: usize,
}

impl Default for ShConfig {
    fn default() -> Self {
        Self { degree: 4 }
    }
}

impl ShConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 || self.degree > MAX_SH_DEGREE {
            return Err(Error::Config(format!(
                "spherical harmonic degree must be in 1..={MAX_SH_DEGREE}, got {}",
                self.degree
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.degree * self.degree
    }
}

/// Encodes a unit direction into `degree^2` real SH coefficients written to `out`.
pub fn sh_encode<T: Real>(d: [T; 3], cfg: ShConfig, out: &mut [T]) -> Result<()> {
    cfg.validate()?;
    if out.len() != cfg.output_dim() {
        return Err(Error::Config(format!(
            "sh output buffer has {} slots, expected {}",
            out.len(),
            cfg.output_dim()
        )));
    }
    let norm2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    if !norm2.is_finite() || (norm2.to_f64_lossy() - 1.0).abs() > 2e-6 {
        return Err(Error::Domain(format!(
            "view direction must be unit length, |d|^2 = {norm2}"
        )));
    }
    let [x, y, z] = d;
    let c = T::lit;
    out[0] = c(0.282_094_791_773_878_14);
    if cfg.degree > 1 {
        out[1] = c(0.488_602_511_902_919_9) * y;
        out[2] = c(0.488_602_511_902_919_9) * z;
        out[3] = c(0.488_602_511_902_919_9) * x;
    }
    if cfg.degree > 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[4] = c(1.092_548_430_592_079_2) * x * y;
        out[5] = c(1.092_548_430_592_079_2) * y * z;
        out[6] = c(0.946_174_695_757_560_1) * zz - c(0.315_391_565_252_520_05);
        out[7] = c(1.092_548_430_592_079_2) * x * z;
        out[8] = c(0.546_274_215_296_039_6) * (xx - yy);
        if cfg.degree > 3 {
            out[9] = c(0.590_043_589_926_643_5) * y * (c(3.0) * xx - yy);
            out[10] = c(2.890_611_442_640_554) * x * y * z;
            out[11] = c(0.457_045_799_464_465_8) * y * (c(5.0) * zz - c(1.0));
            out[12] = c(0.373_176_332_590_115_4) * z * (c(5.0) * zz - c(3.0));
            out[13] = c(0.457_045_799_464_465_8) * x * (c(5.0) * zz - c(1.0));
            out[14] = c(1.445_305_721_320_277) * z * (xx - yy);
            out[15] = c(0.590_043_589_926_643_5) * x * (xx - c(3.0) * yy);
        }
    }
    Ok(())
}
