use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rendering::camera::{Ray, Vec3};

/// Axis-aligned scene bounds in world units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.max[a] > self.min[a]) || !self.min[a].is_finite() || !self.max[a].is_finite() {
                return Err(Error::Config(format!(
                    "degenerate scene box on axis {a}: [{}, {}]",
                    self.min[a], self.max[a]
                )));
            }
        }
        Ok(())
    }

    /// Cube centred on the camera-position bounding box, with half-extent
    /// `inflate` times the largest camera half-extent.
    pub fn from_camera_centers(centers: &[Vec3], inflate: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Config("no cameras to bound".into()));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for c in centers {
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
        let half = (0..3).map(|a| 0.5 * (hi[a] - lo[a])).fold(0.0, f64::max).max(1e-3) * inflate;
        Self::new(
            [center[0] - half, center[1] - half, center[2] - half],
            [center[0] + half, center[1] + half, center[2] + half],
        )
    }

    pub fn extent(&self) -> Vec3 {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn diagonal(&self) -> f64 {
        let e = self.extent();
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }

    /// Slab intersection; returns the parametric entry/exit distances.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-300 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut ta, mut tb) = ((self.min[a] - origin[a]) * inv, (self.max[a] - origin[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t1 > t0).then_some((t0, t1))
    }

    /// Bounds `ray.near`/`ray.far` to the part of the ray inside the box,
    /// starting no closer than `near_plane`. Rays that miss get a short
    /// segment just past `near_plane`, which contributes (almost) nothing.
    pub fn bound_ray(&self, mut ray: Ray, near_plane: f64) -> Ray {
        match self.intersect(ray.origin, ray.direction) {
            Some((t0, t1)) if t1 > near_plane * 1.001 => {
                ray.near = t0.max(near_plane);
                ray.far = t1;
            }
            _ => {
                ray.near = near_plane;
                ray.far = near_plane * 1.001;
            }
        }
        ray
    }

    /// Affine map into the unit cube, clamping points outside the box.
    pub fn contract(&self, x: Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = ((x[a] - self.min[a]) / (self.max[a] - self.min[a])).clamp(0.0, 1.0);
        }
        out
    }
}

pub fn contract_to_unit_cube(x_world: Vec3, scene_box: &Aabb) -> Result<Vec3> {
    scene_box.validate()?;
    Ok(scene_box.contract(x_world))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> Aabb {
        Aabb::new([-1.0, -2.0, 0.0], [1.0, 2.0, 4.0]).unwrap()
    }

    #[test]
    fn corners_and_center() {
        let b = unit_box();
        assert_eq!(contract_to_unit_cube(b.min, &b).unwrap(), [0.0, 0.0, 0.0]);
        assert_eq!(contract_to_unit_cube([0.0, 0.0, 2.0], &b).unwrap(), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn outside_points_clamp() {
        let b = unit_box();
        assert_eq!(contract_to_unit_cube([5.0, -7.0, 2.0], &b).unwrap(), [1.0, 0.0, 0.5]);
    }

    #[test]
    fn degenerate_box_is_config_error() {
        let b = Aabb {
            min: [0.0, 0.0, 0.0],
            max: [1.0, 0.0, 1.0],
        };
        assert!(matches!(contract_to_unit_cube([0.0; 3], &b), Err(Error::Config(_))));
    }

    #[test]
    fn camera_box_contains_cameras() {
        let cams = [[2.0, 0.0, 0.5], [-2.0, 0.0, -0.5], [0.0, 2.0, 0.0]];
        let b = Aabb::from_camera_centers(&cams, 1.5).unwrap();
        for c in cams {
            assert!((0..3).all(|a| c[a] > b.min[a] && c[a] < b.max[a]));
        }
    }

    #[test]
    fn intersect_from_inside_and_outside() {
        let b = Aabb::new([-1.0; 3], [1.0; 3]).unwrap();
        let (t0, t1) = b.intersect([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!((t0, t1), (-1.0, 1.0));
        let (t0, t1) = b.intersect([-3.0, 0.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!((t0, t1), (2.0, 4.0));
        assert!(b.intersect([-3.0, 5.0, 0.0], [1.0, 0.0, 0.0]).is_none());
    }
}
