//! Per-pixel temperature maps and their on-disk forms.

use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};

/// Operating range of the thermal camera, in degrees Celsius.
pub const SENSOR_RANGE: [f64; 2] = [-20.0, 120.0];

#[derive(Clone, Debug, PartialEq)]
pub struct ThermalMap {
    pub width: u32,
    pub height: u32,
    /// Row-major temperatures in degrees Celsius.
    pub temps: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ThermalMap {
    pub fn new(width: u32, height: u32, temps: Vec<f64>) -> Result<Self> {
        let n = width as usize * height as usize;
        if temps.len() != n {
            return Err(Error::Dataset(format!(
                "thermal map {width}x{height} needs {n} values, got {}",
                temps.len()
            )));
        }
        Ok(Self {
            width,
            height,
            valid: vec![true; n],
            temps,
        })
    }

    pub fn len(&self) -> usize {
        self.temps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temps.is_empty()
    }

    /// Marks pixels whose reading lies outside `range` as invalid.
    pub fn mask_outside(mut self, range: [f64; 2]) -> Self {
        for (v, t) in self.valid.iter_mut().zip(&self.temps) {
            *v = *v && *t >= range[0] && *t <= range[1];
        }
        self
    }

    pub fn same_shape(&self, other: &ThermalMap) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Raises every reading below `floor` to `floor`; the mask is untouched.
pub fn clamp_thermal(map: &ThermalMap, floor: f64) -> ThermalMap {
    let mut out = map.clone();
    out.temps.iter_mut().for_each(|t| *t = t.max(floor));
    out
}

pub fn quantize(t: f64, t_min: f64, t_max: f64) -> u16 {
    let x = ((t - t_min) / (t_max - t_min)).clamp(0.0, 1.0);
    (x * 65535.0).round() as u16
}

pub fn dequantize(raw: u16, t_min: f64, t_max: f64) -> f64 {
    t_min + (raw as f64 / 65535.0) * (t_max - t_min)
}

fn check_bounds(t_min: f64, t_max: f64) -> Result<()> {
    if !(t_min < t_max) || !t_min.is_finite() || !t_max.is_finite() {
        return Err(Error::Dataset(format!("invalid temperature bounds [{t_min}, {t_max}]")));
    }
    Ok(())
}

/// Writes `map` as a 16-bit grayscale PNG normalised by `[t_min, t_max]`.
pub fn write_thermal_png(map: &ThermalMap, t_min: f64, t_max: f64, path: &Path) -> Result<()> {
    check_bounds(t_min, t_max)?;
    let raw: Vec<u16> = map.temps.iter().map(|t| quantize(*t, t_min, t_max)).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width, map.height, raw).expect("buffer sized from the map");
    img.save(path)?;
    Ok(())
}

pub fn read_thermal_png(path: &Path, t_min: f64, t_max: f64) -> Result<ThermalMap> {
    check_bounds(t_min, t_max)?;
    let img = image::open(path)?;
    let gray = match img {
        image::DynamicImage::ImageLuma16(g) => g,
        other => {
            return Err(Error::Dataset(format!(
                "{}: expected a 16-bit grayscale PNG, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = gray.dimensions();
    let temps = gray
        .into_raw()
        .into_iter()
        .map(|r| dequantize(r, t_min, t_max))
        .collect();
    ThermalMap::new(w, h, temps)
}

/// Float grid as CSV, one image row per line.
pub fn write_thermal_csv(map: &ThermalMap, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in map.temps.chunks(map.width as usize) {
        w.write_record(row.iter().map(|t| format!("{t:.17e}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_thermal_csv(path: &Path) -> Result<ThermalMap> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut temps = Vec::new();
    let mut width = None;
    let mut height = 0u32;
    for rec in r.records() {
        let rec = rec?;
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Dataset(format!("{}: ragged thermal grid", path.display())));
            }
            _ => {}
        }
        for field in rec.iter() {
            let t: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Dataset(format!("{}: bad temperature {field:?}", path.display())))?;
            temps.push(t);
        }
        height += 1;
    }
    ThermalMap::new(width.unwrap_or(0) as u32, height, temps)
}
