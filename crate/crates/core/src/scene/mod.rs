//! Parametric table-and-cup scene, synthetic depth camera, random pose
//! generation and field-of-view checks.

mod camera;
pub mod dataset;
mod render;

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use camera::{CameraModel, DepthImage};
pub use render::{ray_hit, render_depth};

use crate::error::{Error, Result};
use crate::kinematics::Pose;

/// Horizontal rectangular table top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Table {
    /// World z of the table surface (m).
    pub height: f64,
    pub center: [f64; 2],
    pub half_extent: [f64; 2],
}

/// Box-shaped handle on the cup's local +x side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Handle {
    /// Radial protrusion beyond the cup wall (m).
    pub reach: f64,
    pub width: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Handle {
    /// Local-frame axis-aligned bounds. The box starts slightly inside the
    /// wall so the two solids overlap.
    pub fn bounds(&self, radius: f64) -> (Vector3<f64>, Vector3<f64>) {
        (
            Vector3::new(radius - 0.005, -0.5 * self.width, self.z_min),
            Vector3::new(radius + self.reach, 0.5 * self.width, self.z_max),
        )
    }
}

/// Solid capped cylinder standing on the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cup {
    /// x, y of the base center on the table (m).
    pub position: [f64; 2],
    pub radius: f64,
    pub height: f64,
    pub yaw: f64,
    pub handle: Option<Handle>,
}

impl Cup {
    /// Local frame: origin at the base center, z up, x toward the handle.
    pub fn frame(&self, table: &Table) -> Pose {
        let (s, c) = self.yaw.sin_cos();
        Pose::new(
            Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            Vector3::new(self.position[0], self.position[1], table.height),
        )
    }

    /// Horizontal radius of the cylinder that bounds cup and handle.
    pub fn bounding_radius(&self) -> f64 {
        self.radius + self.handle.map_or(0.0, |h| h.reach)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub table: Table,
    pub cup: Cup,
}

impl Default for Scene {
    /// Cup of radius 4 cm and height 10 cm, centered on a 1.6 m square table
    /// whose surface is the robot base plane.
    fn default() -> Self {
        let position = [0.45, 0.15];
        Self {
            table: Table {
                height: 0.0,
                center: position,
                half_extent: [0.8, 0.8],
            },
            cup: Cup {
                position,
                radius: 0.04,
                height: 0.10,
                yaw: 0.0,
                // Top flush with the rim so it stays visible from any
                // viewpoint above the table.
                handle: Some(Handle {
                    reach: 0.04,
                    width: 0.02,
                    z_min: 0.02,
                    z_max: 0.10,
                }),
            },
        }
    }
}

impl Scene {
    /// Center of the cup's bounding cylinder (mid-height on the axis).
    pub fn cup_center(&self) -> Vector3<f64> {
        Vector3::new(
            self.cup.position[0],
            self.cup.position[1],
            self.table.height + 0.5 * self.cup.height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.cup;
        if !(c.radius > 0.0 && c.height > 0.0) {
            return Err(Error::Config("cup radius and height must be positive".into()));
        }
        let t = &self.table;
        let inside = (0..2).all(|k| (c.position[k] - t.center[k]).abs() <= t.half_extent[k]);
        if !inside {
            return Err(Error::Config("cup must stand on the table".into()));
        }
        Ok(())
    }

    /// Sample points on the cup body: rings at the base, mid-height and rim,
    /// plus both ends of the axis, in world frame.
    pub fn silhouette_samples(&self) -> Vec<Vector3<f64>> {
        const RING: usize = 16;
        let r = self.cup.radius;
        let base = self.table.height;
        let (x0, y0) = (self.cup.position[0], self.cup.position[1]);
        let mut pts = Vec::with_capacity(3 * RING + 2);
        for z in [base, base + 0.5 * self.cup.height, base + self.cup.height] {
            for k in 0..RING {
                let a = k as f64 * TAU / RING as f64;
                pts.push(Vector3::new(x0 + r * a.cos(), y0 + r * a.sin(), z));
            }
        }
        pts.push(Vector3::new(x0, y0, base));
        pts.push(Vector3::new(x0, y0, base + self.cup.height));
        pts
    }
}

/// Camera positions on the upper spherical cap around a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapSampler {
    pub radius_min: f64,
    pub radius_max: f64,
    /// Largest angle from the vertical (rad); `π/2` is the full hemisphere.
    pub max_polar: f64,
}

impl Default for CapSampler {
    fn default() -> Self {
        Self {
            radius_min: 0.05,
            radius_max: 0.85,
            max_polar: FRAC_PI_2,
        }
    }
}

/// Random camera pose on the cap around `target`, looking at it with a random
/// roll. Positions are uniform in area over the cap; radius is uniform.
pub fn sample_camera_pose_on_cap<R: Rng + ?Sized>(
    rng: &mut R,
    cap: &CapSampler,
    target: &Vector3<f64>,
) -> Pose {
    let radius = if cap.radius_max > cap.radius_min {
        rng.random_range(cap.radius_min..=cap.radius_max)
    } else {
        cap.radius_min
    };
    let cos_min = cap.max_polar.cos();
    let cos_polar: f64 = rng.random_range(cos_min..=1.0);
    let sin_polar = (1.0 - cos_polar * cos_polar).max(0.0).sqrt();
    let azimuth: f64 = rng.random_range(0.0..TAU);
    let roll: f64 = rng.random_range(0.0..TAU);
    let dir = Vector3::new(sin_polar * azimuth.cos(), sin_polar * azimuth.sin(), cos_polar);
    Pose::look_at(target + radius * dir, *target, roll)
}

/// Shifts the cup uniformly within `±range` in x and y and draws a fresh yaw
/// in `[0, 2π)`. The result is clamped to the table.
pub fn perturb_object<R: Rng + ?Sized>(scene: &Scene, rng: &mut R, range: f64) -> Scene {
    let mut out = *scene;
    for k in 0..2 {
        let shift = if range > 0.0 {
            rng.random_range(-range..=range)
        } else {
            0.0
        };
        let lo = scene.table.center[k] - scene.table.half_extent[k];
        let hi = scene.table.center[k] + scene.table.half_extent[k];
        out.cup.position[k] = (scene.cup.position[k] + shift).clamp(lo, hi);
    }
    out.cup.yaw = rng.random_range(0.0..TAU);
    out
}

/// The cup counts as visible when its center and at least one body sample
/// ([`Scene::silhouette_samples`]) project into the closed image rectangle in front
/// of the camera.
pub fn object_in_fov(scene: &Scene, camera_pose: &Pose, cam: &CameraModel) -> bool {
    let to_cam = camera_pose.inverse();
    let visible = |p: &Vector3<f64>| {
        cam.project(&to_cam.transform_point(p))
            .is_some_and(|(u, v)| cam.contains(u, v))
    };
    visible(&scene.cup_center()) && scene.silhouette_samples().iter().any(visible)
}
