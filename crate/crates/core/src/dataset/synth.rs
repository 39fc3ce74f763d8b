//! Closed-form synthetic scenes: spheres and boxes seen from a ring of
//! cameras, with exact per-pixel color and temperature.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::scene::{FrameEntry, SceneManifest, Split};
use crate::dataset::thermal::{write_thermal_csv, write_thermal_png, ThermalMap, SENSOR_RANGE};
use crate::error::{Error, Result};
use crate::rendering::camera::Vec3;
use crate::rendering::{generate_ray, Aabb, Camera};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extents: Vec3 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Albedo {
    Constant([f64; 3]),
    /// Blend from `bottom` to `top` with the surface normal's z component.
    Gradient {
        bottom: [f64; 3],
        top: [f64; 3],
    },
    /// Longitude/latitude checkerboard with `2 * squares` by `squares` cells
    /// on spheres, and a world-space lattice of cell size `1 / squares` on boxes.
    Checker {
        a: [f64; 3],
        b: [f64; 3],
        squares: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceTemp {
    Constant(f64),
    /// `base + slope * n_z` for outward normal `n`.
    NormalZ {
        base: f64,
        slope: f64,
    },
}

impl SurfaceTemp {
    fn eval(&self, normal: Vec3) -> f64 {
        match self {
            SurfaceTemp::Constant(t) => *t,
            SurfaceTemp::NormalZ { base, slope } => base + slope * normal[2],
        }
    }

    fn range(&self) -> [f64; 2] {
        match self {
            SurfaceTemp::Constant(t) => [*t, *t],
            SurfaceTemp::NormalZ { base, slope } => [base - slope.abs(), base + slope.abs()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: Albedo,
    pub temperature: SurfaceTemp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    pub width: u32,
    pub height: u32,
    pub fov_y_deg: f64,
    /// Cycled over the ring.
    pub elevations_deg: Vec<f64>,
    pub target: Vec3,
}

impl CameraRing {
    /// Cameras evenly spaced in azimuth, starting at `phase` radians.
    pub fn cameras(&self, phase: f64) -> Result<Vec<Camera>> {
        (0..self.count)
            .map(|i| {
                let az = phase + 2.0 * PI * i as f64 / self.count as f64;
                let el = self.elevations_deg[i % self.elevations_deg.len()].to_radians();
                let eye = [
                    self.target[0] + self.radius * el.cos() * az.cos(),
                    self.target[1] + self.radius * el.cos() * az.sin(),
                    self.target[2] + self.radius * el.sin(),
                ];
                Camera::look_at(
                    eye,
                    self.target,
                    [0.0, 0.0, 1.0],
                    self.width,
                    self.height,
                    self.fov_y_deg,
                )
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSceneSpec {
    pub primitives: Vec<Primitive>,
    pub background_color: [f64; 3],
    pub background_temp: f64,
    pub temp_bounds: [f64; 2],
    pub cameras: CameraRing,
    /// Ring indices held out for testing.
    pub test_views: Vec<usize>,
}

impl SynthSceneSpec {
    /// Cube around the primitives with twice their half-extent.
    pub fn object_box(&self) -> Result<Aabb> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.primitives {
            let (c, h) = match p.shape {
                Shape::Sphere { center, radius } => (center, [radius; 3]),
                Shape::Box { center, half_extents } => (center, half_extents),
            };
            for a in 0..3 {
                lo[a] = lo[a].min(c[a] - h[a]);
                hi[a] = hi[a].max(c[a] + h[a]);
            }
        }
        let mid = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
        let half = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        Aabb::new(mid.map(|m| m - half), mid.map(|m| m + half))
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.temp_bounds;
        if !(lo < hi) {
            return Err(Error::Config("synthetic temperature bounds are empty".into()));
        }
        let inside = |t: f64| t >= lo && t <= hi;
        if !inside(self.background_temp) {
            return Err(Error::Config("background temperature outside bounds".into()));
        }
        for p in &self.primitives {
            let [a, b] = p.temperature.range();
            if !inside(a) || !inside(b) {
                return Err(Error::Config(format!(
                    "primitive temperatures [{a}, {b}] outside bounds"
                )));
            }
        }
        let c = &self.cameras;
        if c.count < 3 {
            return Err(Error::Config(format!("need at least 3 cameras, got {}", c.count)));
        }
        if c.elevations_deg.is_empty() || c.width == 0 || c.height == 0 || !(c.radius > 0.0) {
            return Err(Error::Config("camera ring is degenerate".into()));
        }
        if self.test_views.iter().any(|v| *v >= c.count) {
            return Err(Error::Config("test view index beyond camera count".into()));
        }
        if self.test_views.len() >= c.count {
            return Err(Error::Config("no training views left".into()));
        }
        Ok(())
    }

    /// Opaque sphere with a smooth color gradient and a vertical temperature
    /// gradient (40 to 80 degrees) over a 15 degree background.
    pub fn hot_sphere(size: u32, views: usize, test_views: Vec<usize>) -> Self {
        Self {
            primitives: vec![Primitive {
                shape: Shape::Sphere {
                    center: [0.0; 3],
                    radius: 1.0,
                },
                albedo: Albedo::Gradient {
                    bottom: [0.75, 0.3, 0.15],
                    top: [0.95, 0.8, 0.35],
                },
                temperature: SurfaceTemp::NormalZ {
                    base: 60.0,
                    slope: 20.0,
                },
            }],
            background_color: [0.2, 0.25, 0.35],
            background_temp: 15.0,
            temp_bounds: [0.0, 100.0],
            cameras: default_ring(size, views),
            test_views,
        }
    }

    /// Uniform 40 degree sphere with a high-contrast checkerboard albedo.
    pub fn checker_sphere(size: u32, views: usize, test_views: Vec<usize>) -> Self {
        Self {
            primitives: vec![Primitive {
                shape: Shape::Sphere {
                    center: [0.0; 3],
                    radius: 1.0,
                },
                albedo: Albedo::Checker {
                    a: [0.9, 0.9, 0.85],
                    b: [0.1, 0.12, 0.15],
                    squares: 4,
                },
                temperature: SurfaceTemp::Constant(40.0),
            }],
            background_color: [0.45, 0.5, 0.55],
            background_temp: 10.0,
            temp_bounds: [0.0, 100.0],
            cameras: default_ring(size, views),
            test_views,
        }
    }
}

fn default_ring(size: u32, views: usize) -> CameraRing {
    CameraRing {
        count: views,
        radius: 4.0,
        width: size,
        height: size,
        fov_y_deg: 40.0,
        elevations_deg: vec![15.0, 35.0],
        target: [0.0; 3],
    }
}

/// Surface point reached by a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub primitive: usize,
    pub point: Vec3,
    pub normal: Vec3,
}

fn sphere_hit(center: Vec3, radius: f64, o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
    let oc = [o[0] - center[0], o[1] - center[1], o[2] - center[2]];
    let b = oc[0] * d[0] + oc[1] * d[1] + oc[2] * d[2];
    let c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t = if -b - sq > 1e-9 { -b - sq } else { -b + sq };
    if t <= 1e-9 {
        return None;
    }
    let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
    let n = [
        (p[0] - center[0]) / radius,
        (p[1] - center[1]) / radius,
        (p[2] - center[2]) / radius,
    ];
    Some((t, n))
}

fn box_hit(center: Vec3, half: Vec3, o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut axis0 = 0;
    let mut axis1 = 0;
    for a in 0..3 {
        let lo = center[a] - half[a];
        let hi = center[a] + half[a];
        if d[a].abs() < 1e-15 {
            if o[a] < lo || o[a] > hi {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        if ta > t0 {
            t0 = ta;
            axis0 = a;
        }
        if tb < t1 {
            t1 = tb;
            axis1 = a;
        }
    }
    if t0 > t1 || t1 <= 1e-9 {
        return None;
    }
    let (t, axis) = if t0 > 1e-9 { (t0, axis0) } else { (t1, axis1) };
    let p = o[axis] + t * d[axis];
    let mut n = [0.0; 3];
    n[axis] = if p > center[axis] { 1.0 } else { -1.0 };
    Some((t, n))
}

/// Nearest intersection of the ray `o + t d` with the scene.
pub fn trace(spec: &SynthSceneSpec, o: Vec3, d: Vec3) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, p) in spec.primitives.iter().enumerate() {
        let hit = match p.shape {
            Shape::Sphere { center, radius } => sphere_hit(center, radius, o, d),
            Shape::Box { center, half_extents } => box_hit(center, half_extents, o, d),
        };
        if let Some((t, normal)) = hit {
            if best.is_none_or(|b| t < b.t) {
                best = Some(Hit {
                    t,
                    primitive: i,
                    point: [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]],
                    normal,
                });
            }
        }
    }
    best
}

fn albedo_at(prim: &Primitive, hit: &Hit) -> [f64; 3] {
    match &prim.albedo {
        Albedo::Constant(c) => *c,
        Albedo::Gradient { bottom, top } => {
            let s = 0.5 * (hit.normal[2] + 1.0);
            [0, 1, 2].map(|k| bottom[k] + s * (top[k] - bottom[k]))
        }
        Albedo::Checker { a, b, squares } => {
            let sq = *squares as f64;
            let parity = match prim.shape {
                Shape::Sphere { .. } => {
                    let n = hit.normal;
                    let lon = n[1].atan2(n[0]) + PI;
                    let lat = n[2].clamp(-1.0, 1.0).asin() + 0.5 * PI;
                    (lon / (2.0 * PI) * 2.0 * sq).floor() as i64 + (lat / PI * sq).floor() as i64
                }
                Shape::Box { .. } => hit.point.iter().map(|x| (x * sq).floor() as i64).sum(),
            };
            if parity.rem_euclid(2) == 0 {
                *a
            } else {
                *b
            }
        }
    }
}

/// Ground truth of one view, sampled at pixel centres.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticView {
    pub rgb: Vec<f64>,
    pub temps: Vec<f64>,
    /// Index of the primitive covering each pixel.
    pub coverage: Vec<Option<usize>>,
}

pub fn render_analytic(spec: &SynthSceneSpec, cam: &Camera) -> Result<AnalyticView> {
    let n = cam.width as usize * cam.height as usize;
    let mut view = AnalyticView {
        rgb: Vec::with_capacity(3 * n),
        temps: Vec::with_capacity(n),
        coverage: Vec::with_capacity(n),
    };
    for j in 0..cam.height {
        for i in 0..cam.width {
            let ray = generate_ray(cam, i as f64 + 0.5, j as f64 + 0.5)?;
            match trace(spec, ray.origin, ray.direction) {
                Some(hit) => {
                    let prim = &spec.primitives[hit.primitive];
                    view.rgb.extend(albedo_at(prim, &hit));
                    view.temps.push(prim.temperature.eval(hit.normal));
                    view.coverage.push(Some(hit.primitive));
                }
                None => {
                    view.rgb.extend(spec.background_color);
                    view.temps.push(spec.background_temp);
                    view.coverage.push(None);
                }
            }
        }
    }
    Ok(view)
}

/// Writes `manifest.json`, `rgb/`, `thermal/` and `thermal_raw/` under `out`.
/// The seed only rotates the camera ring.
pub fn generate_synthetic_scene(spec: &SynthSceneSpec, seed: u64, out: &Path) -> Result<SceneManifest> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.random::<f64>() * 2.0 * PI / spec.cameras.count as f64;
    let cameras = spec.cameras.cameras(phase)?;
    for sub in ["rgb", "thermal", "thermal_raw"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let [t_min, t_max] = spec.temp_bounds;
    let mut frames = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let view = render_analytic(spec, cam)?;
        let stem = format!("view_{i:03}");
        let rgb8: Vec<u8> = view
            .rgb
            .iter()
            .map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = image::RgbImage::from_raw(cam.width, cam.height, rgb8).expect("sized from the camera");
        img.save(out.join(format!("rgb/{stem}.png")))?;
        let map = ThermalMap::new(cam.width, cam.height, view.temps)?;
        write_thermal_png(&map, t_min, t_max, &out.join(format!("thermal/{stem}.png")))?;
        write_thermal_csv(&map, &out.join(format!("thermal_raw/{stem}.csv")))?;
        let m = cam.cam_to_world;
        frames.push(FrameEntry {
            id: Some(stem.clone()),
            file_path: format!("rgb/{stem}.png"),
            thermal_path: format!("thermal/{stem}.png"),
            thermal_raw_path: Some(format!("thermal_raw/{stem}.csv")),
            transform_matrix: vec![m[0].to_vec(), m[1].to_vec(), m[2].to_vec(), vec![0.0, 0.0, 0.0, 1.0]],
            fl_x: Some(cam.fx),
            fl_y: Some(cam.fy),
            cx: Some(cam.cx),
            cy: Some(cam.cy),
            w: Some(cam.width),
            h: Some(cam.height),
            split: Some(if spec.test_views.contains(&i) {
                Split::Test
            } else {
                Split::Train
            }),
        });
    }
    let manifest = SceneManifest {
        t_min,
        t_max,
        sensor_range: SENSOR_RANGE,
        fl_x: None,
        fl_y: None,
        cx: None,
        cy: None,
        w: None,
        h: None,
        test_every: None,
        scene_box: Some(spec.object_box()?),
        frames,
    };
    manifest.write(out)?;
    let spec_path = out.join("synth_spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(spec)?).map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_temperature_scene_is_exact() {
        let mut spec = SynthSceneSpec::hot_sphere(16, 4, vec![1]);
        spec.primitives[0].temperature = SurfaceTemp::Constant(40.0);
        spec.background_temp = 10.0;
        let cam = spec.cameras.cameras(0.0).unwrap().remove(0);
        let view = render_analytic(&spec, &cam).unwrap();
        assert!(view.temps.iter().all(|t| *t == 40.0 || *t == 10.0));
        assert!(view.temps.contains(&40.0) && view.temps.contains(&10.0));
    }

    #[test]
    fn checker_sphere_has_flat_thermal_and_varied_rgb() {
        let spec = SynthSceneSpec::checker_sphere(32, 4, vec![]);
        let cam = spec.cameras.cameras(0.3).unwrap().remove(1);
        let view = render_analytic(&spec, &cam).unwrap();
        let mut lum = Vec::new();
        for (p, c) in view.coverage.iter().enumerate() {
            if c.is_some() {
                assert_eq!(view.temps[p], 40.0);
                lum.push(view.rgb[3 * p]);
            }
        }
        assert!(lum.iter().any(|l| *l > 0.5) && lum.iter().any(|l| *l < 0.5));
    }

    #[test]
    fn box_hit_from_outside_and_inside() {
        let (t, n) = box_hit([0.0; 3], [1.0; 3], [-5.0, 0.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!((t, n), (4.0, [-1.0, 0.0, 0.0]));
        let (t, n) = box_hit([0.0; 3], [1.0; 3], [0.0; 3], [0.0, 0.0, 1.0]).unwrap();
        assert_eq!((t, n), (1.0, [0.0, 0.0, 1.0]));
        assert!(box_hit([0.0; 3], [1.0; 3], [-5.0, 3.0, 0.0], [1.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = SynthSceneSpec::hot_sphere(8, 2, vec![]);
        assert!(s.validate().is_err());
        s.cameras.count = 5;
        s.background_temp = 500.0;
        assert!(s.validate().is_err());
    }
}
