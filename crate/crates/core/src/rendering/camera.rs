use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Pinhole camera. The camera looks down its local -z axis with +x to the
/// right and +y up; image rows grow downward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rows of the 3x4 camera-to-world transform `[R | t]`.
    pub cam_to_world: [[f64; 4]; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        [
            self.origin[0] + t * self.direction[0],
            self.origin[1] + t * self.direction[1],
            self.origin[2] + t * self.direction[2],
        ]
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("camera has zero-sized image".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (d - expect).abs() > 1e-6 {
                    return Err(Error::Config("camera rotation is not orthonormal within 1e-6".into()));
                }
            }
        }
        Ok(())
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let m = &self.cam_to_world;
        [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]
    }

    pub fn center(&self) -> Vec3 {
        [
            self.cam_to_world[0][3],
            self.cam_to_world[1][3],
            self.cam_to_world[2][3],
        ]
    }

    /// Camera at `eye` looking at `target` with the given vertical field of view.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, width: u32, height: u32, fov_y_deg: f64) -> Result<Self> {
        let back = normalize(sub(eye, target));
        let right = cross(up, back);
        if dot(right, right) < 1e-12 {
            return Err(Error::Config("look_at up vector is parallel to view direction".into()));
        }
        let right = normalize(right);
        let true_up = cross(back, right);
        let f = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        let cam = Camera {
            width,
            height,
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            cam_to_world: [
                [right[0], true_up[0], back[0], eye[0]],
                [right[1], true_up[1], back[1], eye[1]],
                [right[2], true_up[2], back[2], eye[2]],
            ],
        };
        cam.validate()?;
        Ok(cam)
    }

    /// World point to continuous pixel coordinates; `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let r = self.rotation();
        let d = sub(p, self.center());
        // R^T d
        let local = [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ];
        if local[2] >= 0.0 {
            return None;
        }
        let depth = -local[2];
        Some((
            self.cx + self.fx * local[0] / depth,
            self.cy - self.fy * local[1] / depth,
        ))
    }
}

/// Back-projects continuous pixel coordinates `(u, v)` (pixel centre of
/// column `i` is `i + 0.5`) into a unit-direction world ray. `near`/`far` are
/// left for the caller to bound against the scene.
pub fn generate_ray(cam: &Camera, u: f64, v: f64) -> Result<Ray> {
    if !(u >= 0.0 && u <= cam.width as f64 && v >= 0.0 && v <= cam.height as f64) {
        return Err(Error::Domain(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            cam.width, cam.height
        )));
    }
    let local = [(u - cam.cx) / cam.fx, -(v - cam.cy) / cam.fy, -1.0];
    let r = cam.rotation();
    let world = [dot(r[0], local), dot(r[1], local), dot(r[2], local)];
    Ok(Ray {
        origin: cam.center(),
        direction: normalize(world),
        near: 0.0,
        far: f64::INFINITY,
    })
}
