//! Ray-cast depth rendering of the table-and-cup scene.

use nalgebra::Vector3;

use super::camera::{CameraModel, DepthImage};
use super::Scene;
use crate::kinematics::Pose;

const EPS: f64 = 1e-9;

/// Nearest positive ray parameter hitting the table plane inside its extent.
fn hit_table(scene: &Scene, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    if d.z.abs() < 1e-15 {
        return None;
    }
    let t = (scene.table.height - o.z) / d.z;
    if t <= EPS {
        return None;
    }
    let x = o.x + t * d.x - scene.table.center[0];
    let y = o.y + t * d.y - scene.table.center[1];
    (x.abs() <= scene.table.half_extent[0] && y.abs() <= scene.table.half_extent[1]).then_some(t)
}

/// Intersection with a solid capped cylinder `x² + y² <= r², 0 <= z <= h`
/// given in the cup's local frame.
pub(crate) fn hit_capped_cylinder(
    radius: f64,
    height: f64,
    o: &Vector3<f64>,
    d: &Vector3<f64>,
) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut keep = |t: f64| {
        if t > EPS && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };

    let a = d.x * d.x + d.y * d.y;
    if a > 1e-18 {
        let b = 2.0 * (o.x * d.x + o.y * d.y);
        let c = o.x * o.x + o.y * o.y - radius * radius;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                let z = o.z + t * d.z;
                if (0.0..=height).contains(&z) {
                    keep(t);
                }
            }
        }
    }
    if d.z.abs() > 1e-15 {
        for plane in [0.0, height] {
            let t = (plane - o.z) / d.z;
            let x = o.x + t * d.x;
            let y = o.y + t * d.y;
            if x * x + y * y <= radius * radius {
                keep(t);
            }
        }
    }
    best
}

/// Slab test against an axis-aligned box.
fn hit_box(lo: &Vector3<f64>, hi: &Vector3<f64>, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < lo[k] || o[k] > hi[k] {
                return None;
            }
        } else {
            let a = (lo[k] - o[k]) / d[k];
            let b = (hi[k] - o[k]) / d[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    if t0 > t1 {
        return None;
    }
    if t0 > EPS {
        Some(t0)
    } else if t1 > EPS {
        Some(t1)
    } else {
        None
    }
}

/// Nearest hit of a world-frame ray with any scene surface.
pub fn ray_hit(scene: &Scene, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let cup_frame = scene.cup.frame(&scene.table);
    let lo = cup_frame.inverse();
    let ol = lo.transform_point(o);
    let dl = lo.rotation * d;

    let cup = &scene.cup;
    let mut best = hit_capped_cylinder(cup.radius, cup.height, &ol, &dl);
    if let Some(h) = &cup.handle {
        let (blo, bhi) = h.bounds(cup.radius);
        if let Some(t) = hit_box(&blo, &bhi, &ol, &dl) {
            best = Some(best.map_or(t, |b| b.min(t)));
        }
    }
    if let Some(t) = hit_table(scene, o, d) {
        best = Some(best.map_or(t, |b| b.min(t)));
    }
    best
}

/// Depth image of `scene` seen from `camera_pose` (camera frame in world).
///
/// Depth is measured along the optical axis. Each pixel averages
/// `supersample²` rays; a ray that misses everything or lands outside
/// `[near, far]` contributes the far-plane value.
pub fn render_depth(scene: &Scene, camera_pose: &Pose, cam: &CameraModel) -> DepthImage {
    let s = cam.supersample.max(1);
    let inv = 1.0 / s as f64;
    let origin = camera_pose.translation;
    let mut data = Vec::with_capacity(cam.pixel_count());
    for row in 0..cam.height {
        for col in 0..cam.width {
            let mut sum = 0.0;
            for j in 0..s {
                for i in 0..s {
                    let u = col as f64 + (i as f64 + 0.5) * inv;
                    let v = row as f64 + (j as f64 + 0.5) * inv;
                    let dir = camera_pose.rotation * cam.ray(u, v);
                    let depth = match ray_hit(scene, &origin, &dir) {
                        Some(t) if t >= cam.near && t <= cam.far => t,
                        _ => cam.far,
                    };
                    sum += depth;
                }
            }
            data.push(if s == 1 { sum } else { sum * inv * inv });
        }
    }
    DepthImage {
        width: cam.width,
        height: cam.height,
        data,
    }
}
