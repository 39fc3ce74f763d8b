//! Scene manifests and loading of paired RGB + thermal frames.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::thermal::{clamp_thermal, read_thermal_csv, read_thermal_png, ThermalMap, SENSOR_RANGE};
use crate::error::{Error, Result};
use crate::rendering::{Aabb, Camera};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_TEST_EVERY: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One frame entry. Intrinsics may be given per frame or once at the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    /// RGB image, relative to the scene directory.
    pub file_path: String,
    pub thermal_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal_raw_path: Option<String>,
    /// Camera-to-world, 3x4 or 4x4 rows (last row ignored).
    pub transform_matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl FrameEntry {
    pub fn name(&self, index: usize) -> String {
        self.id
            .clone()
            .unwrap_or_else(|| format!("frame {index} ({})", self.file_path))
    }
}

fn default_sensor_range() -> [f64; 2] {
    SENSOR_RANGE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub t_min: f64,
    pub t_max: f64,
    #[serde(default = "default_sensor_range")]
    pub sensor_range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<u32>,
    /// Used only for frames without an explicit split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_every: Option<usize>,
    /// Region the field is sampled in; derived from the training cameras when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_box: Option<Aabb>,
    pub frames: Vec<FrameEntry>,
}

impl SceneManifest {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min < self.t_max) {
            return Err(Error::Dataset(format!(
                "t_min ({}) must be below t_max ({})",
                self.t_min, self.t_max
            )));
        }
        let [lo, hi] = self.sensor_range;
        if !(lo < hi) {
            return Err(Error::Dataset("sensor_range is empty".into()));
        }
        if self.t_min.max(lo) > hi || self.t_max.min(hi) < lo {
            return Err(Error::Dataset("temperature bounds lie outside the sensor range".into()));
        }
        if self.frames.is_empty() {
            return Err(Error::Dataset("manifest lists no frames".into()));
        }
        if let Some(b) = &self.scene_box {
            b.validate().map_err(|e| Error::Dataset(e.to_string()))?;
        }
        if self.test_every == Some(0) {
            return Err(Error::Dataset("test_every must be positive".into()));
        }
        Ok(())
    }

    pub fn split_of(&self, index: usize) -> Split {
        if let Some(s) = self.frames[index].split {
            return s;
        }
        if index.is_multiple_of(self.test_every.unwrap_or(DEFAULT_TEST_EVERY)) {
            Split::Test
        } else {
            Split::Train
        }
    }

    pub fn camera(&self, index: usize) -> Result<Camera> {
        let f = &self.frames[index];
        let name = f.name(index);
        let missing = |what: &str| Error::Dataset(format!("{name}: no {what} in frame or manifest"));
        let w = f.w.or(self.w).ok_or_else(|| missing("width"))?;
        let h = f.h.or(self.h).ok_or_else(|| missing("height"))?;
        let fx = f.fl_x.or(self.fl_x).ok_or_else(|| missing("fl_x"))?;
        let fy = f.fl_y.or(self.fl_y).unwrap_or(fx);
        let cx = f.cx.or(self.cx).unwrap_or(w as f64 / 2.0);
        let cy = f.cy.or(self.cy).unwrap_or(h as f64 / 2.0);
        let m = &f.transform_matrix;
        if !(m.len() == 3 || m.len() == 4) || m.iter().take(3).any(|r| r.len() != 4) {
            return Err(Error::Dataset(format!("{name}: transform_matrix must be 3x4 or 4x4")));
        }
        let mut c2w = [[0.0; 4]; 3];
        for (i, row) in c2w.iter_mut().enumerate() {
            row.copy_from_slice(&m[i]);
        }
        let cam = Camera {
            width: w,
            height: h,
            fx,
            fy,
            cx,
            cy,
            cam_to_world: c2w,
        };
        cam.validate().map_err(|e| Error::Dataset(format!("{name}: {e}")))?;
        Ok(cam)
    }

    pub fn read(dir: &Path) -> Result<(Self, String)> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: SceneManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok((manifest, hex_digest(&bytes)))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    /// Mark readings outside the sensor range (before clamping) invalid.
    pub mask_out_of_range: bool,
    /// Read the float CSV instead of the 16-bit PNG when both exist.
    pub prefer_raw: bool,
    /// Clamp floor in degrees Celsius.
    pub clamp_floor: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            mask_out_of_range: false,
            prefer_raw: false,
            clamp_floor: SENSOR_RANGE[0],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub name: String,
    /// File stem shared by the frame's outputs.
    pub stem: String,
    pub camera: Camera,
    /// Row-major RGB in [0,1].
    pub rgb: Vec<f32>,
    pub thermal: ThermalMap,
    pub split: Split,
    /// Appearance row; training frames only.
    pub appearance: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SceneDataset {
    pub root: PathBuf,
    pub manifest: SceneManifest,
    pub digest: String,
    pub frames: Vec<Frame>,
}

impl SceneDataset {
    pub fn t_bounds(&self) -> [f64; 2] {
        [self.manifest.t_min, self.manifest.t_max]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.frames.len())
            .filter(|i| self.frames[*i].split == split)
            .collect()
    }

    pub fn num_train(&self) -> usize {
        self.frames.iter().filter(|f| f.split == Split::Train).count()
    }

    /// Box-filters every frame by an integer factor, cropping the remainder.
    /// Thermal averages use valid readings only; a block with none stays invalid.
    pub fn downscale(&self, factor: u32) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Dataset("downscale factor must be positive".into()));
        }
        let mut out = self.clone();
        for f in &mut out.frames {
            let (w, h) = (f.camera.width / factor, f.camera.height / factor);
            if w == 0 || h == 0 {
                return Err(Error::Dataset(format!(
                    "{}: too small to downscale by {factor}",
                    f.name
                )));
            }
            let src_w = f.camera.width as usize;
            let k = factor as usize;
            let mut rgb = Vec::with_capacity(3 * (w * h) as usize);
            let mut temps = Vec::with_capacity((w * h) as usize);
            let mut valid = Vec::with_capacity((w * h) as usize);
            for y in 0..h as usize {
                for x in 0..w as usize {
                    let mut c = [0.0f64; 3];
                    let (mut t, mut n) = (0.0, 0usize);
                    for dy in 0..k {
                        for dx in 0..k {
                            let p = (y * k + dy) * src_w + x * k + dx;
                            for (ch, acc) in c.iter_mut().enumerate() {
                                *acc += f.rgb[3 * p + ch] as f64;
                            }
                            if f.thermal.valid[p] {
                                t += f.thermal.temps[p];
                                n += 1;
                            }
                        }
                    }
                    rgb.extend(c.map(|v| (v / (k * k) as f64) as f32));
                    temps.push(if n > 0 { t / n as f64 } else { 0.0 });
                    valid.push(n > 0);
                }
            }
            let mut thermal = ThermalMap::new(w, h, temps)?;
            thermal.valid = valid;
            let s = factor as f64;
            f.camera = Camera {
                width: w,
                height: h,
                fx: f.camera.fx / s,
                fy: f.camera.fy / s,
                cx: f.camera.cx / s,
                cy: f.camera.cy / s,
                cam_to_world: f.camera.cam_to_world,
            };
            f.rgb = rgb;
            f.thermal = thermal;
        }
        Ok(out)
    }

    /// Mean RGB and normalised temperature over training pixels.
    pub fn train_means(&self) -> ([f64; 3], f64) {
        let mut rgb = [0.0; 3];
        let mut t = 0.0;
        let mut n = 0usize;
        for f in self.frames.iter().filter(|f| f.split == Split::Train) {
            for (px, temp) in f.rgb.chunks(3).zip(&f.thermal.temps) {
                for k in 0..3 {
                    rgb[k] += px[k] as f64;
                }
                t += temp;
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        let [lo, hi] = self.t_bounds();
        (rgb.map(|c| c / n), (t / n - lo) / (hi - lo))
    }
}

fn file_stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_owned())
}

pub fn read_rgb_png(path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok((w, h, img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()))
}

pub fn load_scene(dir: &Path) -> Result<SceneDataset> {
    load_scene_with(dir, &LoadOptions::default())
}

pub fn load_scene_with(dir: &Path, opts: &LoadOptions) -> Result<SceneDataset> {
    let (manifest, digest) = SceneManifest::read(dir)?;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut next_appearance = 0;
    for (i, entry) in manifest.frames.iter().enumerate() {
        let name = entry.name(i);
        let rgb_path = dir.join(&entry.file_path);
        let th_path = dir.join(&entry.thermal_path);
        for (what, p) in [("RGB", &rgb_path), ("thermal", &th_path)] {
            if !p.is_file() {
                return Err(Error::Dataset(format!(
                    "{name}: {what} image {} is missing",
                    p.display()
                )));
            }
        }
        let camera = manifest.camera(i)?;
        let (w, h, rgb) = read_rgb_png(&rgb_path).map_err(|e| Error::Dataset(format!("{name}: {e}")))?;
        let raw_path = entry.thermal_raw_path.as_ref().map(|p| dir.join(p));
        let thermal = match raw_path {
            Some(p) if opts.prefer_raw && p.is_file() => read_thermal_csv(&p),
            _ => read_thermal_png(&th_path, manifest.t_min, manifest.t_max),
        }
        .map_err(|e| Error::Dataset(format!("{name}: {e}")))?;
        if (w, h) != (thermal.width, thermal.height) {
            return Err(Error::Dataset(format!(
                "{name}: RGB is {w}x{h} but thermal is {}x{}",
                thermal.width, thermal.height
            )));
        }
        if (w, h) != (camera.width, camera.height) {
            return Err(Error::Dataset(format!(
                "{name}: image is {w}x{h} but the camera is {}x{}",
                camera.width, camera.height
            )));
        }
        let thermal = if opts.mask_out_of_range {
            thermal.mask_outside(manifest.sensor_range)
        } else {
            thermal
        };
        let thermal = clamp_thermal(&thermal, opts.clamp_floor);
        let split = manifest.split_of(i);
        let appearance = (split == Split::Train).then(|| {
            next_appearance += 1;
            next_appearance - 1
        });
        frames.push(Frame {
            name,
            stem: file_stem(&entry.file_path),
            camera,
            rgb,
            thermal,
            split,
            appearance,
        });
    }
    if next_appearance == 0 {
        return Err(Error::Dataset("scene has no training frames".into()));
    }
    Ok(SceneDataset {
        root: dir.to_path_buf(),
        manifest,
        digest,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(i: usize) -> FrameEntry {
        FrameEntry {
            id: Some(format!("f{i}")),
            file_path: format!("rgb/f{i}.png"),
            thermal_path: format!("thermal/f{i}.png"),
            thermal_raw_path: None,
            transform_matrix: vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 2.0],
            ],
            fl_x: None,
            fl_y: None,
            cx: None,
            cy: None,
            w: None,
            h: None,
            split: None,
        }
    }

    fn manifest(n: usize) -> SceneManifest {
        SceneManifest {
            t_min: 0.0,
            t_max: 50.0,
            sensor_range: SENSOR_RANGE,
            fl_x: Some(10.0),
            fl_y: None,
            cx: None,
            cy: None,
            w: Some(4),
            h: Some(3),
            test_every: None,
            scene_box: None,
            frames: (0..n).map(entry).collect(),
        }
    }

    #[test]
    fn default_split_is_every_eighth() {
        let m = manifest(17);
        let test: Vec<usize> = (0..17).filter(|i| m.split_of(*i) == Split::Test).collect();
        assert_eq!(test, vec![0, 8, 16]);
    }

    #[test]
    fn global_intrinsics_fill_frames() {
        let cam = manifest(1).camera(0).unwrap();
        assert_eq!(
            (cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy),
            (4, 3, 10.0, 10.0, 2.0, 1.5)
        );
        assert_eq!(cam.center(), [0.0, 0.0, 2.0]);
    }

    #[test]
    fn bad_bounds_rejected() {
        let mut m = manifest(1);
        m.t_max = -1.0;
        assert!(matches!(m.validate(), Err(Error::Dataset(_))));
    }

    #[test]
    fn missing_thermal_names_frame() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("rgb")).unwrap();
        let img = image::RgbImage::new(4, 3);
        img.save(dir.path().join("rgb/f0.png")).unwrap();
        manifest(1).write(dir.path()).unwrap();
        let err = load_scene(dir.path()).unwrap_err().to_string();
        assert!(err.contains("f0") && err.contains("thermal"), "{err}");
    }
}
