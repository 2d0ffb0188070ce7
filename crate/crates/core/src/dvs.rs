//! Direct visual servoing on normalized depth images: the classical
//! baseline and the source of demonstration episodes.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::env::{compute_reward, goal_errors, GoalState, Outcome, ServoEnv, StartSpec};
use crate::error::{Error, Result};
use crate::kinematics::{pose_errors, Pose, Twist};
use crate::rl::{Demonstrator, GoalEnv, Transition};
use crate::rng::Rng;
use crate::scene::{CameraModel, DepthImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvsConfig {
    /// λ in `v = -λ L⁺ ε`.
    pub gain: f64,
    pub max_iterations: usize,
    /// Damping of the pseudo-inverse.
    pub mu: f64,
    pub convergence_trans: f64,
    pub interaction: InteractionSource,
}

/// Which image the interaction matrix is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionSource {
    Current,
    Desired,
    /// Average of the current and desired matrices.
    Mean,
}

impl InteractionSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(Self::Current),
            "desired" => Ok(Self::Desired),
            "mean" => Ok(Self::Mean),
            _ => Err(Error::Config(format!("unknown interaction matrix source '{s}'"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Current => "current",
            Self::Desired => "desired",
            Self::Mean => "mean",
        }
    }
}

impl Default for DvsConfig {
    fn default() -> Self {
        Self {
            gain: 1.0,
            max_iterations: 200,
            mu: 1e-6,
            convergence_trans: 0.002,
            interaction: InteractionSource::Current,
        }
    }
}

impl DvsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0) {
            return Err(Error::Config("DVS gain must be positive".into()));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::Config("DVS damping must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `N × 6` interaction matrix, row-major, one row per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    pub rows: usize,
    pub data: Vec<[f64; 6]>,
}

impl InteractionMatrix {
    pub fn row(&self, i: usize) -> &[f64; 6] {
        &self.data[i]
    }

    pub fn apply(&self, v: &Twist) -> Vec<f64> {
        let v = v.to_array();
        self.data.iter().map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}

/// Derivative along one image axis in pixel units: central differences
/// inside, one-sided at the border.
fn gradient(values: &[f64], w: usize, h: usize, col: usize, row: usize, horizontal: bool) -> f64 {
    let at = |c: usize, r: usize| values[r * w + c];
    let (i, n) = if horizontal { (col, w) } else { (row, h) };
    if n < 2 {
        return 0.0;
    }
    let pick = |k: usize| if horizontal { at(k, row) } else { at(col, k) };
    if i == 0 {
        pick(1) - pick(0)
    } else if i == n - 1 {
        pick(n - 1) - pick(n - 2)
    } else {
        0.5 * (pick(i + 1) - pick(i - 1))
    }
}

/// Rate of change of each normalized depth pixel under a camera twist.
///
/// A pixel sees a surface point whose projection moves with the usual point
/// interaction matrix `L_x` (at the pixel's own depth `Z`), so the pixel value
/// changes by `-∇I · L_x v`; the observed depth itself changes by
/// `[0, 0, -1, -yZ, xZ, 0] · v`, scaled into normalized units. Pixels at the
/// far plane see no surface and get no depth term.
pub fn interaction_matrix(image: &DepthImage, cam: &CameraModel) -> InteractionMatrix {
    let (w, h) = (image.width, image.height);
    let norm = image.normalized(cam);
    let span = cam.far - cam.near;
    let mut data = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let z = image.get(col, row).max(cam.near);
            let x = (col as f64 + 0.5 - cam.cx) / cam.fx;
            let y = (row as f64 + 0.5 - cam.cy) / cam.fy;
            let gx = gradient(&norm, w, h, col, row, true) * cam.fx;
            let gy = gradient(&norm, w, h, col, row, false) * cam.fy;
            let lx = [-1.0 / z, 0.0, x / z, x * y, -(1.0 + x * x), y];
            let ly = [0.0, -1.0 / z, y / z, 1.0 + y * y, -x * y, -x];
            let mut r: [f64; 6] = std::array::from_fn(|k| -(gx * lx[k] + gy * ly[k]));
            if image.get(col, row) < cam.far {
                let lz = [0.0, 0.0, -1.0, -y * z, x * z, 0.0];
                for k in 0..6 {
                    r[k] += lz[k] / span;
                }
            }
            data.push(r);
        }
    }
    InteractionMatrix { rows: w * h, data }
}

/// `-λ (LᵀL + μI)⁻¹ Lᵀ ε`, with `ε = current − desired` in normalized depth.
pub fn dvs_step(current: &DepthImage, desired: &DepthImage, cam: &CameraModel, cfg: &DvsConfig) -> Twist {
    assert!(current.same_dims(desired), "dvs_step on images of different size");
    let l = match cfg.interaction {
        InteractionSource::Current => interaction_matrix(current, cam),
        InteractionSource::Desired => interaction_matrix(desired, cam),
        InteractionSource::Mean => {
            let mut a = interaction_matrix(current, cam);
            let b = interaction_matrix(desired, cam);
            for (ra, rb) in a.data.iter_mut().zip(&b.data) {
                for k in 0..6 {
                    ra[k] = 0.5 * (ra[k] + rb[k]);
                }
            }
            a
        }
    };
    let span = 1.0 / (cam.far - cam.near);
    let mut ltl = Matrix6::<f64>::zeros();
    let mut lte = Vector6::<f64>::zeros();
    for (i, r) in l.data.iter().enumerate() {
        let e = (current.data[i] - desired.data[i]) * span;
        if r.iter().all(|v| *v == 0.0) {
            continue;
        }
        let rv = Vector6::from_column_slice(r);
        ltl += rv * rv.transpose();
        lte += rv * e;
    }
    if lte.iter().all(|v| *v == 0.0) {
        return Twist::zero();
    }
    ltl += Matrix6::identity() * cfg.mu;
    let v = ltl
        .cholesky()
        .map(|c| c.solve(&lte))
        .unwrap_or_else(|| ltl.pseudo_inverse(1e-12).expect("svd converges") * lte);
    Twist::from_vector(&(-cfg.gain * v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub e_trans: f64,
    pub e_rot: f64,
    pub e_img: f64,
    pub twist: [f64; 6],
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct DvsTrajectory {
    pub rows: Vec<TrajectoryRow>,
    pub poses: Vec<Pose>,
    pub images: Vec<DepthImage>,
    pub outcome: Outcome,
    pub converged: bool,
}

impl DvsTrajectory {
    pub fn steps(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn final_errors(&self) -> (f64, f64) {
        self.rows.last().map_or((f64::NAN, f64::NAN), |r| (r.e_trans, r.e_rot))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,e_trans,e_rot,e_img,vx,vy,vz,wx,wy,wz,converged\n");
        for r in &self.rows {
            let t = r.twist;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.step, r.e_trans, r.e_rot, r.e_img, t[0], t[1], t[2], t[3], t[4], t[5], r.converged
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Servos a freshly reset environment toward its goal image until the episode
/// ends or `max_iterations` control steps have been taken. Row 0 is the
/// initial state.
pub fn run_dvs_servo(env: &mut ServoEnv, cfg: &DvsConfig) -> Result<DvsTrajectory> {
    cfg.validate()?;
    let goal = env.goal().ok_or_else(|| Error::Protocol("DVS needs a reset environment".into()))?;
    let desired = goal.image.clone();
    let cam = env.config().camera;
    let errors = env.errors().expect("episode running");
    let mut outcome = env.outcome().expect("episode running");
    let mut traj = DvsTrajectory {
        rows: vec![TrajectoryRow {
            step: 0,
            e_trans: errors.trans,
            e_rot: errors.rot,
            e_img: errors.img,
            twist: [0.0; 6],
            converged: outcome.is_success(),
        }],
        poses: vec![*env.camera_pose().expect("episode running")],
        images: vec![env.image().expect("episode running").clone()],
        outcome,
        converged: outcome.is_success(),
    };
    let mut step = 0;
    while !outcome.is_terminal() && step < cfg.max_iterations {
        let twist = dvs_step(env.image().expect("episode running"), &desired, &cam, cfg);
        let r = env.step_twist(&twist)?;
        step += 1;
        outcome = r.outcome;
        traj.rows.push(TrajectoryRow {
            step,
            e_trans: r.errors.trans,
            e_rot: r.errors.rot,
            e_img: r.errors.img,
            twist: r.twist.to_array(),
            converged: outcome.is_success(),
        });
        traj.poses.push(*env.camera_pose().expect("episode running"));
        traj.images.push(env.image().expect("episode running").clone());
    }
    traj.outcome = outcome;
    traj.converged = outcome.is_success();
    Ok(traj)
}

/// Demonstration episodes: reset within `radius` of the goal, servo with DVS
/// and keep the transitions of episodes that end in success.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvsDemonstrator {
    pub cfg: DvsConfig,
    pub radius: f64,
    /// Largest start rotation away from the goal (rad).
    pub rotation: f64,
}

impl DvsDemonstrator {
    /// Rotation perturbations of up to 5° accompany any nonzero radius.
    pub fn new(cfg: DvsConfig, radius: f64) -> Self {
        let rotation = if radius > 0.0 { 5f64.to_radians() } else { 0.0 };
        Self { cfg, radius, rotation }
    }
}

impl Demonstrator<ServoEnv> for DvsDemonstrator {
    fn demonstrate(&mut self, env: &mut ServoEnv, rng: &mut Rng) -> Result<Option<Vec<Transition<GoalState>>>> {
        env.reset_with(
            StartSpec::NearGoal {
                trans: self.radius,
                rot: self.rotation,
            },
            rng,
        )?;
        let desired = env.goal().expect("just reset").image.clone();
        let cam = env.config().camera;
        let mut out = Vec::new();
        if env.outcome() == Some(Outcome::Success) {
            return Ok(Some(vec![terminal_at_goal(env)]));
        }
        for _ in 0..self.cfg.max_iterations {
            let twist = dvs_step(env.image().expect("episode running"), &desired, &cam, &self.cfg);
            let action = env.config().bounds.to_action(&twist);
            let s = env.step_transition(&action)?;
            let over = s.episode_over;
            out.push(s.transition);
            if over {
                break;
            }
        }
        Ok(out.last().filter(|t| t.outcome.is_success()).is_some().then_some(out))
    }
}

/// Single success transition for an episode that starts at its goal.
fn terminal_at_goal(env: &ServoEnv) -> Transition<GoalState> {
    let obs = env.observation().flatten();
    let state = env.goal_state().expect("episode").clone();
    let goal = env.goal().expect("episode").state.clone();
    let w = &env.config().reward;
    let e = goal_errors(&state, &goal);
    let reward = compute_reward(w, &e, &e, &[0.0; 6], Outcome::Success);
    Transition {
        obs: obs.clone(),
        action: vec![0.0; 6],
        reward,
        next_obs: obs,
        done: true,
        outcome: Outcome::Success,
        step: 0,
        achieved_prev: state.clone(),
        achieved: state,
        desired: goal,
    }
}

/// Runs `episodes` demonstration attempts and returns the successful ones.
pub fn collect_demonstrations(
    env: &mut ServoEnv,
    cfg: &DvsConfig,
    radius: f64,
    episodes: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<Transition<GoalState>>>> {
    let mut demo = DvsDemonstrator::new(*cfg, radius);
    let mut out = Vec::new();
    for _ in 0..episodes {
        if let Some(ep) = demo.demonstrate(env, rng)? {
            out.push(ep);
        }
    }
    Ok(out)
}

/// Translation and rotation error between consecutive trajectory poses and the goal.
pub fn pose_error_series(poses: &[Pose], goal: &Pose) -> Vec<(f64, f64)> {
    poses.iter().map(|p| pose_errors(p, goal)).collect()
}
