//! Pose sources and writing rendered views to disk.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_thermal_csv, write_thermal_png, SceneDataset, Split, ThermalMap};
use crate::error::{Error, Result};
use crate::rendering::camera::{cross, dot, normalize, sub, Vec3};
use crate::rendering::{Camera, RenderedView};

pub const RGB_DIR: &str = "rgb";
pub const THERMAL_DIR: &str = "thermal";
pub const THERMAL_RAW_DIR: &str = "thermal_raw";
pub const DEPTH_DIR: &str = "depth";
pub const POSES_FILE: &str = "poses.json";

/// Where render poses come from.
#[derive(Clone, Debug, PartialEq)]
pub enum PoseSource {
    /// The scene's held-out frames.
    Test,
    /// A JSON pose file.
    File(PathBuf),
    /// `n` poses evenly spaced in azimuth around the training cameras.
    Orbit(usize),
}

impl PoseSource {
    /// Parses `test`, `orbit:N` or a path to an existing pose file.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "test" {
            return Ok(PoseSource::Test);
        }
        if let Some(n) = s.strip_prefix("orbit:") {
            return match n.parse::<usize>() {
                Ok(n) if n > 0 => Ok(PoseSource::Orbit(n)),
                _ => Err(Error::Usage(format!("bad orbit count in `{s}`"))),
            };
        }
        let p = PathBuf::from(s);
        if p.is_file() {
            return Ok(PoseSource::File(p));
        }
        Err(Error::Usage(format!(
            "unknown pose source `{s}` (expected `test`, `orbit:N` or a pose file)"
        )))
    }
}

/// A named pose; `frame` links test-split poses back to their scene frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedPose {
    pub stem: String,
    pub camera: Camera,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PoseFileEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    transform_matrix: Vec<Vec<f64>>,
    fl_x: Option<f64>,
    fl_y: Option<f64>,
    cx: Option<f64>,
    cy: Option<f64>,
    w: Option<u32>,
    h: Option<u32>,
}

/// Pose file: `{ "fl_x", "w", "h", ..., "frames": [{ "transform_matrix", "name"? }] }`
/// with the same conventions as a scene manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct PoseFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<u32>,
    frames: Vec<PoseFileEntry>,
}

pub fn read_pose_file(path: &Path) -> Result<Vec<NamedPose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: PoseFile = serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    if file.frames.is_empty() {
        return Err(Error::Dataset(format!("{}: no poses", path.display())));
    }
    file.frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let stem = f.name.clone().unwrap_or_else(|| format!("pose_{i:03}"));
            let missing = |what: &str| Error::Dataset(format!("pose {stem}: no {what}"));
            let w = f.w.or(file.w).ok_or_else(|| missing("width"))?;
            let h = f.h.or(file.h).ok_or_else(|| missing("height"))?;
            let fx = f.fl_x.or(file.fl_x).ok_or_else(|| missing("fl_x"))?;
            let m = &f.transform_matrix;
            if !(m.len() == 3 || m.len() == 4) || m.iter().take(3).any(|r| r.len() != 4) {
                return Err(Error::Dataset(format!(
                    "pose {stem}: transform_matrix must be 3x4 or 4x4"
                )));
            }
            let mut c2w = [[0.0; 4]; 3];
            for (k, row) in c2w.iter_mut().enumerate() {
                row.copy_from_slice(&m[k]);
            }
            let camera = Camera {
                width: w,
                height: h,
                fx,
                fy: f.fl_y.or(file.fl_y).unwrap_or(fx),
                cx: f.cx.or(file.cx).unwrap_or(w as f64 / 2.0),
                cy: f.cy.or(file.cy).unwrap_or(h as f64 / 2.0),
                cam_to_world: c2w,
            };
            camera
                .validate()
                .map_err(|e| Error::Dataset(format!("pose {stem}: {e}")))?;
            Ok(NamedPose {
                stem,
                camera,
                frame: None,
            })
        })
        .collect()
}

fn solve3(a: [[f64; 3]; 3], b: Vec3) -> Option<Vec3> {
    let det = dot(a[0], cross(a[1], a[2]));
    if det.abs() < 1e-12 {
        return None;
    }
    // Cramer's rule on the rows of a symmetric matrix.
    let col = |m: [[f64; 3]; 3], j: usize, v: Vec3| {
        let mut m = m;
        for i in 0..3 {
            m[i][j] = v[i];
        }
        dot(m[0], cross(m[1], m[2]))
    };
    Some([col(a, 0, b) / det, col(a, 1, b) / det, col(a, 2, b) / det])
}

/// Point closest (least squares) to all optical axes.
pub fn look_at_point(cams: &[Camera]) -> Vec3 {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for c in cams {
        let r = c.rotation();
        let d = normalize([-r[0][2], -r[1][2], -r[2][2]]);
        let o = c.center();
        for i in 0..3 {
            for j in 0..3 {
                let p = if i == j { 1.0 } else { 0.0 } - d[i] * d[j];
                a[i][j] += p;
                b[i] += p * o[j];
            }
        }
    }
    solve3(a, b).unwrap_or_else(|| {
        let n = cams.len() as f64;
        let s = cams.iter().fold([0.0; 3], |s, c| {
            let o = c.center();
            [s[0] + o[0], s[1] + o[1], s[2] + o[2]]
        });
        [s[0] / n, s[1] / n, s[2] / n]
    })
}

/// `n` cameras on a circle around the training cameras' look-at point, at
/// their mean height and radius, with the intrinsics of the first one.
pub fn orbit_poses(cams: &[Camera], n: usize) -> Result<Vec<NamedPose>> {
    if cams.is_empty() || n == 0 {
        return Err(Error::Usage("orbit needs cameras and a positive count".into()));
    }
    let target = look_at_point(cams);
    let up = normalize(cams.iter().fold([0.0; 3], |s, c| {
        let r = c.rotation();
        [s[0] + r[0][1], s[1] + r[1][1], s[2] + r[2][1]]
    }));
    let (mut radius, mut height) = (0.0, 0.0);
    for c in cams {
        let v = sub(c.center(), target);
        let hgt = dot(v, up);
        let flat = sub(v, [hgt * up[0], hgt * up[1], hgt * up[2]]);
        radius += dot(flat, flat).sqrt();
        height += hgt;
    }
    radius /= cams.len() as f64;
    height /= cams.len() as f64;
    let helper = if up[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let e1 = normalize(cross(up, helper));
    let e2 = cross(up, e1);
    let r0 = &cams[0];
    (0..n)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let (s, c) = phi.sin_cos();
            let eye = [0, 1, 2].map(|i| target[i] + radius * (c * e1[i] + s * e2[i]) + height * up[i]);
            let mut cam = Camera::look_at(eye, target, up, r0.width, r0.height, 45.0)?;
            cam.fx = r0.fx;
            cam.fy = r0.fy;
            cam.cx = r0.cx;
            cam.cy = r0.cy;
            Ok(NamedPose {
                stem: format!("orbit_{k:03}"),
                camera: cam,
                frame: None,
            })
        })
        .collect()
}

pub fn resolve_poses(source: &PoseSource, data: &SceneDataset) -> Result<Vec<NamedPose>> {
    match source {
        PoseSource::Test => {
            let test = data.indices(Split::Test);
            if test.is_empty() {
                return Err(Error::Dataset("scene has no test frames".into()));
            }
            Ok(test
                .into_iter()
                .map(|i| NamedPose {
                    stem: data.frames[i].stem.clone(),
                    camera: data.frames[i].camera.clone(),
                    frame: Some(i),
                })
                .collect())
        }
        PoseSource::File(p) => read_pose_file(p),
        PoseSource::Orbit(n) => {
            let cams: Vec<Camera> = data
                .indices(Split::Train)
                .into_iter()
                .map(|i| data.frames[i].camera.clone())
                .collect();
            orbit_poses(&cams, *n)
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn rendered_thermal_map(view: &RenderedView) -> Option<Result<ThermalMap>> {
    view.thermal
        .as_ref()
        .map(|t| ThermalMap::new(view.width, view.height, t.clone()))
}

/// Writes `rgb/<stem>.png`, `thermal/<stem>.png` (16 bit over `bounds`),
/// `thermal_raw/<stem>.csv` (degrees) and `depth/<stem>.csv`.
pub fn write_rendered_view(view: &RenderedView, stem: &str, out: &Path, bounds: [f64; 2]) -> Result<()> {
    if let Some(rgb) = &view.rgb {
        let dir = out.join(RGB_DIR);
        ensure_dir(&dir)?;
        let mut img = RgbImage::new(view.width, view.height);
        for (p, px) in img.pixels_mut().enumerate() {
            *px = Rgb([0, 1, 2].map(|k| (rgb[3 * p + k].clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        img.save(dir.join(format!("{stem}.png")))?;
    }
    if let Some(map) = rendered_thermal_map(view) {
        let map = map?;
        for d in [THERMAL_DIR, THERMAL_RAW_DIR] {
            ensure_dir(&out.join(d))?;
        }
        write_thermal_png(
            &map,
            bounds[0],
            bounds[1],
            &out.join(THERMAL_DIR).join(format!("{stem}.png")),
        )?;
        write_thermal_csv(&map, &out.join(THERMAL_RAW_DIR).join(format!("{stem}.csv")))?;
    }
    let dir = out.join(DEPTH_DIR);
    ensure_dir(&dir)?;
    let depth = ThermalMap::new(view.width, view.height, view.depth.clone())?;
    write_thermal_csv(&depth, &dir.join(format!("{stem}.csv")))
}

pub fn write_poses(poses: &[NamedPose], out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let p = out.join(POSES_FILE);
    let frames = poses
        .iter()
        .map(|n| {
            let c = &n.camera;
            let mut m: Vec<Vec<f64>> = c.cam_to_world.iter().map(|r| r.to_vec()).collect();
            m.push(vec![0.0, 0.0, 0.0, 1.0]);
            PoseFileEntry {
                name: Some(n.stem.clone()),
                transform_matrix: m,
                fl_x: Some(c.fx),
                fl_y: Some(c.fy),
                cx: Some(c.cx),
                cy: Some(c.cy),
                w: Some(c.width),
                h: Some(c.height),
            }
        })
        .collect();
    let file = PoseFile {
        fl_x: None,
        fl_y: None,
        cx: None,
        cy: None,
        w: None,
        h: None,
        frames,
    };
    std::fs::write(&p, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(&p, e))
}
