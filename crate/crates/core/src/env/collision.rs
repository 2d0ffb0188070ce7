use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::kinematics::{forward_kinematics, DhChain, JointVector, JOINTS};
use crate::scene::Scene;

/// Bounding spheres centered on the link frame origins after each joint,
/// plus one around the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSpheres {
    pub joint_radii: [f64; JOINTS],
    pub camera_radius: f64,
}

impl Default for LinkSpheres {
    fn default() -> Self {
        Self {
            joint_radii: [0.06, 0.06, 0.05, 0.045, 0.045, 0.045],
            camera_radius: 0.02,
        }
    }
}

/// Distance from `p` to the solid upright cylinder of the cup (0 inside).
fn cup_distance(scene: &Scene, p: &Vector3<f64>) -> f64 {
    let c = &scene.cup;
    let dx = p.x - c.position[0];
    let dy = p.y - c.position[1];
    let radial = ((dx * dx + dy * dy).sqrt() - c.radius).max(0.0);
    let base = scene.table.height;
    let vertical = (base - p.z).max(p.z - (base + c.height)).max(0.0);
    radial.hypot(vertical)
}

/// True iff a sphere penetrates the table plane or the cup. Touching is not
/// a collision.
pub fn check_collision(chain: &DhChain, q: &JointVector, scene: &Scene, spheres: &LinkSpheres) -> bool {
    let fk = forward_kinematics(chain, q);
    let centers = fk.frames[1..]
        .iter()
        .map(|f| f.translation)
        .zip(spheres.joint_radii)
        .chain(std::iter::once((fk.camera.translation, spheres.camera_radius)));
    for (p, r) in centers {
        if p.z - r < scene.table.height || cup_distance(scene, &p) < r {
            return true;
        }
    }
    false
}
