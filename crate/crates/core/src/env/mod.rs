//! Goal-conditioned visual servoing environment: the arm, the depth camera on
//! its flange, the cup scene and the autoencoder wired into reset/step.

mod collision;
mod log;
mod reward;

use std::sync::Arc;

use nalgebra::Vector3;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use collision::{check_collision, LinkSpheres};
pub use log::{EpisodeLog, StepRecord};
pub use reward::{
    classify, compute_reward, image_error, terminal_reward, Errors, FailureReason, Outcome, RewardWeights,
};

use crate::autoencoder::{AeModel, LatentCode};
use crate::error::{Error, Result};
use crate::kinematics::{
    forward_kinematics, inverse_kinematics, jacobian_determinant, pose_errors, resolve_joint_velocities, DhChain,
    IkOptions, JointState, JointVector, Pose, Twist, JOINTS,
};
use crate::rl::{EnvStep, GoalEnv, Transition};
use crate::rng::Rng;
use crate::scene::{
    object_in_fov, perturb_object, render_depth, sample_camera_pose_on_cap, CameraModel, CapSampler, DepthImage,
    Scene,
};

pub const ACTION_DIM: usize = 6;

/// Camera twist bounds; actions in `[-1, 1]` map affinely onto them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub min: [f64; ACTION_DIM],
    pub max: [f64; ACTION_DIM],
}

impl ActionBounds {
    pub fn symmetric(linear: f64, angular: f64) -> Self {
        let max = [linear, linear, linear, angular, angular, angular];
        Self {
            min: max.map(|v| -v),
            max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.iter().zip(&self.max).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("action bounds must satisfy min < max".into()));
        }
        Ok(())
    }

    pub fn to_twist(&self, action: &[f64]) -> Twist {
        let v: Vec<f64> = (0..ACTION_DIM)
            .map(|i| {
                let a = action[i].clamp(-1.0, 1.0);
                self.min[i] + 0.5 * (a + 1.0) * (self.max[i] - self.min[i])
            })
            .collect();
        Twist::from_slice(&v)
    }

    /// Inverse of [`ActionBounds::to_twist`]. A twist outside the bounds is
    /// first shrunk toward the box center, keeping its direction.
    pub fn to_action(&self, twist: &Twist) -> [f64; ACTION_DIM] {
        let t = twist.to_array();
        let mut a: [f64; ACTION_DIM] =
            std::array::from_fn(|i| 2.0 * (t[i] - self.min[i]) / (self.max[i] - self.min[i]) - 1.0);
        let worst = a.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for v in &mut a {
            *v /= worst;
        }
        a
    }
}

impl Default for ActionBounds {
    fn default() -> Self {
        Self::symmetric(0.1, 0.3)
    }
}

/// Experimental settings: object displacement range and whether the episode
/// starts from a random viewpoint instead of the home pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub object_range: f64,
    pub random_start: bool,
}

impl Setting {
    pub fn numbered(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Self { object_range: 0.05, random_start: false }),
            2 => Ok(Self { object_range: 0.10, random_start: false }),
            3 => Ok(Self { object_range: 0.10, random_start: true }),
            _ => Err(Error::Config(format!("setting must be 1, 2 or 3, got {n}"))),
        }
    }
}

/// Where an episode starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StartSpec {
    Home,
    /// Random viewpoint on the start cap around the cup.
    Cap,
    /// Goal pose displaced by at most `trans` meters and `rot` radians.
    NearGoal { trans: f64, rot: f64 },
    /// Goal pose displaced by exactly `trans` meters and `rot` radians in
    /// random directions.
    Offset { trans: f64, rot: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub chain: DhChain,
    pub camera: CameraModel,
    pub scene: Scene,
    pub reward: RewardWeights,
    pub control_hz: f64,
    pub bounds: ActionBounds,
    pub spheres: LinkSpheres,
    pub goal_cap: CapSampler,
    pub start_cap: CapSampler,
    pub home: JointVector,
    /// Reset draws this many candidate episodes before giving up.
    pub reset_attempts: usize,
    /// Poses used at reset must keep `|det J|` above this multiple of the
    /// singularity threshold.
    pub reset_det_margin: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let cap = CapSampler {
            radius_min: 0.2,
            radius_max: 0.4,
            max_polar: 45f64.to_radians(),
        };
        Self {
            chain: DhChain::ur5e(),
            camera: CameraModel::default(),
            scene: Scene::default(),
            reward: RewardWeights::default(),
            control_hz: 10.0,
            bounds: ActionBounds::default(),
            spheres: LinkSpheres::default(),
            goal_cap: cap,
            start_cap: cap,
            home: HOME,
            reset_attempts: 100,
            reset_det_margin: 10.0,
        }
    }
}

/// Elbow-up configuration with the camera about 0.3 m above and slightly
/// behind the nominal cup, looking at it.
pub const HOME: JointVector = [0.8504, -1.1884, -2.2249, -1.0826, 1.3308, -2.3173];

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.chain.validate()?;
        self.camera.validate()?;
        self.scene.validate()?;
        self.reward.validate()?;
        self.bounds.validate()?;
        if !(self.control_hz > 0.0) {
            return Err(Error::Config("control frequency must be positive".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_hz
    }
}

/// A state expressed in goal space.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalState {
    pub camera: Pose,
    /// Normalized depth pixels.
    pub pixels: Vec<f64>,
    pub latent: LatentCode,
}

/// Errors of `state` measured against `goal`.
pub fn goal_errors(state: &GoalState, goal: &GoalState) -> Errors {
    let (trans, rot) = pose_errors(&state.camera, &goal.camera);
    Errors {
        trans,
        rot,
        img: image_error(&state.pixels, &goal.pixels),
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeGoal {
    pub camera: Pose,
    pub q: JointVector,
    pub image: DepthImage,
    pub state: Arc<GoalState>,
    pub scene: Scene,
}

impl EpisodeGoal {
    pub fn latent(&self) -> &LatentCode {
        &self.state.latent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub s_t: Vec<f64>,
    pub s_des: Vec<f64>,
    pub f_c: f64,
    pub q: JointVector,
    pub qdot: JointVector,
    pub ee_position: [f64; 3],
    /// `[w, x, y, z]`.
    pub ee_quaternion: [f64; 4],
}

impl Observation {
    pub fn dim(latent: usize) -> usize {
        2 * latent + 1 + 2 * JOINTS + 7
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::dim(self.s_t.len()));
        v.extend(&self.s_t);
        v.extend(&self.s_des);
        v.push(self.f_c);
        v.extend(self.q);
        v.extend(self.qdot);
        v.extend(self.ee_position);
        v.extend(self.ee_quaternion);
        v
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub outcome: Outcome,
    pub errors: Errors,
    pub action: [f64; ACTION_DIM],
    pub twist: Twist,
}

#[derive(Debug, Clone)]
struct Episode {
    goal: EpisodeGoal,
    joints: JointState,
    camera: Pose,
    image: DepthImage,
    state: Arc<GoalState>,
    errors: Errors,
    steps: usize,
    outcome: Outcome,
}

/// One environment instance; see the module docs. Without an autoencoder the
/// latent codes are empty, which is enough for the classical controller.
#[derive(Debug, Clone)]
pub struct ServoEnv {
    cfg: EnvConfig,
    ae: Option<Arc<AeModel>>,
    setting: Setting,
    episode: Option<Episode>,
}

impl ServoEnv {
    pub fn new(cfg: EnvConfig, ae: Option<Arc<AeModel>>, setting: Setting) -> Result<Self> {
        cfg.validate()?;
        if let Some(m) = &ae {
            if m.width != cfg.camera.width || m.height != cfg.camera.height {
                return Err(Error::Config("autoencoder image size differs from the camera".into()));
            }
        }
        Ok(Self {
            cfg,
            ae,
            setting,
            episode: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn setting(&self) -> Setting {
        self.setting
    }

    pub fn latent_dim(&self) -> usize {
        self.ae.as_ref().map_or(0, |m| m.latent_dim())
    }

    pub fn goal(&self) -> Option<&EpisodeGoal> {
        self.episode.as_ref().map(|e| &e.goal)
    }

    pub fn joints(&self) -> Option<&JointState> {
        self.episode.as_ref().map(|e| &e.joints)
    }

    pub fn camera_pose(&self) -> Option<&Pose> {
        self.episode.as_ref().map(|e| &e.camera)
    }

    pub fn image(&self) -> Option<&DepthImage> {
        self.episode.as_ref().map(|e| &e.image)
    }

    pub fn errors(&self) -> Option<Errors> {
        self.episode.as_ref().map(|e| e.errors)
    }

    pub fn steps(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.steps)
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.episode.as_ref().map(|e| e.outcome)
    }

    pub fn goal_state(&self) -> Option<&Arc<GoalState>> {
        self.episode.as_ref().map(|e| &e.state)
    }

    fn encode(&self, pixels: &[f64]) -> Result<LatentCode> {
        match &self.ae {
            Some(m) => m.encode_normalized(pixels),
            None => Ok(LatentCode(Vec::new())),
        }
    }

    fn goal_state_at(&self, scene: &Scene, camera: &Pose) -> Result<(DepthImage, GoalState)> {
        let image = render_depth(scene, camera, &self.cfg.camera);
        let pixels = image.normalized(&self.cfg.camera);
        let latent = self.encode(&pixels)?;
        Ok((
            image,
            GoalState {
                camera: *camera,
                pixels,
                latent,
            },
        ))
    }

    /// Joint vector reaching `target` from `seed` that is usable at reset:
    /// inside limits, collision free, well away from singularities, and with
    /// the cup in view.
    fn solve_reset_pose(&self, scene: &Scene, target: &Pose, seed: &JointVector) -> Option<JointVector> {
        let q = inverse_kinematics(&self.cfg.chain, target, seed, IkOptions::default())?;
        self.pose_is_usable(scene, &q).then_some(q)
    }

    fn pose_is_usable(&self, scene: &Scene, q: &JointVector) -> bool {
        let c = &self.cfg;
        if !c.chain.within_limits(q) || check_collision(&c.chain, q, scene, &c.spheres) {
            return false;
        }
        if jacobian_determinant(&c.chain, q) <= c.reward.phi_jacobian * c.reset_det_margin {
            return false;
        }
        object_in_fov(scene, &forward_kinematics(&c.chain, q).camera, &c.camera)
    }

    /// Starts an episode in the configured setting.
    pub fn reset(&mut self, rng: &mut Rng) -> Result<Observation> {
        let start = if self.setting.random_start {
            StartSpec::Cap
        } else {
            StartSpec::Home
        };
        self.reset_with(start, rng)
    }

    pub fn reset_with(&mut self, start: StartSpec, rng: &mut Rng) -> Result<Observation> {
        let c = &self.cfg;
        for _ in 0..c.reset_attempts.max(1) {
            let scene = perturb_object(&c.scene, rng, self.setting.object_range);
            let target = scene.cup_center();
            let goal_pose = sample_camera_pose_on_cap(rng, &c.goal_cap, &target);
            let start_pose = match start {
                StartSpec::Home => None,
                StartSpec::Cap => Some(sample_camera_pose_on_cap(rng, &c.start_cap, &target)),
                StartSpec::NearGoal { trans, rot } => {
                    let (t, r) = (trans * rng.random::<f64>(), rot * rng.random::<f64>());
                    Some(offset_pose(&goal_pose, t, r, rng))
                }
                StartSpec::Offset { trans, rot } => Some(offset_pose(&goal_pose, trans, rot, rng)),
            };
            let Some(goal_q) = self.solve_reset_pose(&scene, &goal_pose, &c.home) else {
                continue;
            };
            let start_q = match start_pose {
                None => {
                    if !self.pose_is_usable(&scene, &c.home) {
                        continue;
                    }
                    c.home
                }
                Some(p) => {
                    let seed = if matches!(start, StartSpec::Cap) { c.home } else { goal_q };
                    match self.solve_reset_pose(&scene, &p, &seed) {
                        Some(q) => q,
                        None => continue,
                    }
                }
            };
            let goal_camera = forward_kinematics(&c.chain, &goal_q).camera;
            let start_camera = forward_kinematics(&c.chain, &start_q).camera;
            let (e_t, e_r) = pose_errors(&start_camera, &goal_camera);
            if e_t > c.reward.d_trans || e_r > c.reward.d_rot {
                continue;
            }
            return self.begin(scene, goal_q, start_q);
        }
        Err(Error::ResetExhausted(self.cfg.reset_attempts))
    }

    /// Starts an episode from explicit joint vectors; used for replays and
    /// paired comparisons.
    pub fn begin(&mut self, scene: Scene, goal_q: JointVector, start_q: JointVector) -> Result<Observation> {
        let chain = &self.cfg.chain;
        let goal_camera = forward_kinematics(chain, &goal_q).camera;
        let (goal_image, goal_state) = self.goal_state_at(&scene, &goal_camera)?;
        let goal = EpisodeGoal {
            camera: goal_camera,
            q: goal_q,
            image: goal_image,
            state: Arc::new(goal_state),
            scene,
        };
        let camera = forward_kinematics(chain, &start_q).camera;
        let (image, state) = self.goal_state_at(&scene, &camera)?;
        let errors = goal_errors(&state, &goal.state);
        let outcome = classify(&self.cfg.reward, &errors, None, 0);
        self.episode = Some(Episode {
            goal,
            joints: JointState::at_rest(start_q),
            camera,
            image,
            state: Arc::new(state),
            errors,
            steps: 0,
            outcome: if outcome.is_success() { Outcome::Success } else { Outcome::Running },
        });
        Ok(self.observation())
    }

    pub fn observation(&self) -> Observation {
        let e = self.episode.as_ref().expect("observation requires an episode");
        self.observe(&e.joints, &e.state.latent, &e.goal.state.latent)
    }

    fn observe(&self, joints: &JointState, s_t: &LatentCode, s_des: &LatentCode) -> Observation {
        let ee = *forward_kinematics(&self.cfg.chain, &joints.q).end_effector();
        Observation {
            s_t: s_t.0.clone(),
            s_des: s_des.0.clone(),
            f_c: self.cfg.control_hz,
            q: joints.q,
            qdot: joints.qdot,
            ee_position: ee.translation.into(),
            ee_quaternion: ee.quaternion_wxyz(),
        }
    }

    /// Applies a normalized action.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if action.len() != ACTION_DIM {
            return Err(Error::Dimension {
                context: "ServoEnv::step action",
                expected: ACTION_DIM,
                actual: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action".into()));
        }
        let a: [f64; ACTION_DIM] = std::array::from_fn(|i| action[i].clamp(-1.0, 1.0));
        let twist = self.cfg.bounds.to_twist(&a);
        self.advance(a, twist)
    }

    /// Applies a camera twist, shrunk into the action bounds if necessary.
    pub fn step_twist(&mut self, twist: &Twist) -> Result<StepResult> {
        if !twist.is_finite() {
            return Err(Error::NonFinite("twist".into()));
        }
        let a = self.cfg.bounds.to_action(twist);
        self.advance(a, self.cfg.bounds.to_twist(&a))
    }

    fn advance(&mut self, action: [f64; ACTION_DIM], twist: Twist) -> Result<StepResult> {
        let ep = self.episode.as_ref().ok_or_else(|| Error::Protocol("step before reset".into()))?;
        if ep.outcome.is_terminal() {
            return Err(Error::Protocol("step after the episode ended".into()));
        }
        let c = &self.cfg;
        let scene = ep.goal.scene;
        let q = ep.joints.q;
        let mut hard = None;
        let joints = match resolve_joint_velocities(&c.chain, &q, &twist, c.reward.phi_jacobian) {
            Err(Error::Singularity { .. }) => {
                hard = Some(FailureReason::Singularity);
                JointState::at_rest(q)
            }
            Err(e) => return Err(e),
            Ok(qdot) => {
                let dt = c.dt();
                JointState {
                    q: std::array::from_fn(|i| q[i] + qdot[i] * dt),
                    qdot,
                }
            }
        };
        let camera = forward_kinematics(&c.chain, &joints.q).camera;
        if hard.is_none() {
            hard = if joints.violates_limits(&c.chain) {
                Some(FailureReason::JointLimit)
            } else if check_collision(&c.chain, &joints.q, &scene, &c.spheres) {
                Some(FailureReason::Collision)
            } else if jacobian_determinant(&c.chain, &joints.q) <= c.reward.phi_jacobian {
                Some(FailureReason::Singularity)
            } else if !object_in_fov(&scene, &camera, &c.camera) {
                Some(FailureReason::OutOfFov)
            } else {
                None
            };
        }
        let (image, state) = self.goal_state_at(&scene, &camera)?;
        let ep = self.episode.as_mut().expect("checked above");
        let steps = ep.steps + 1;
        let errors = goal_errors(&state, &ep.goal.state);
        let outcome = classify(&c.reward, &errors, hard, steps);
        let reward = compute_reward(&c.reward, &ep.errors, &errors, &action, outcome);
        ep.joints = joints;
        ep.camera = camera;
        ep.image = image;
        ep.state = Arc::new(state);
        ep.errors = errors;
        ep.steps = steps;
        ep.outcome = outcome;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done: outcome.is_terminal(),
            outcome,
            errors,
            action,
            twist,
        })
    }

    fn latent_range(&self) -> std::ops::Range<usize> {
        let l = self.latent_dim();
        l..2 * l
    }
}

/// `pose` moved by `trans` meters along a random direction and rotated by
/// `rot` radians about a random axis of its own frame.
pub fn offset_pose(pose: &Pose, trans: f64, rot: f64, rng: &mut Rng) -> Pose {
    let dir = random_unit(rng);
    let axis = random_unit(rng);
    let mut p = *pose;
    if rot != 0.0 {
        p.rotation = pose.compose(&Pose::from_axis_angle(axis, rot)).rotation;
    }
    p.translation += dir * trans;
    p
}

fn random_unit(rng: &mut Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

impl GoalEnv for ServoEnv {
    type Goal = GoalState;

    fn observation_dim(&self) -> usize {
        Observation::dim(self.latent_dim())
    }

    fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    fn reset_episode(&mut self, rng: &mut Rng) -> Result<Vec<f64>> {
        self.reset(rng).map(|o| o.flatten())
    }

    fn step_transition(&mut self, action: &[f64]) -> Result<EnvStep<GoalState>> {
        let ep = self.episode.as_ref().ok_or_else(|| Error::Protocol("step before reset".into()))?;
        let obs = self.observation().flatten();
        let achieved_prev = Arc::clone(&ep.state);
        let desired = Arc::clone(&ep.goal.state);
        let r = self.step(action)?;
        let ep = self.episode.as_ref().expect("episode running");
        Ok(EnvStep {
            transition: Transition {
                obs,
                action: r.action.to_vec(),
                reward: r.reward,
                next_obs: r.observation.flatten(),
                done: r.done,
                outcome: r.outcome,
                step: ep.steps,
                achieved_prev,
                achieved: Arc::clone(&ep.state),
                desired,
            },
            episode_over: r.done,
            e_trans: r.errors.trans,
            e_rot: r.errors.rot,
        })
    }

    fn relabel(&self, t: &Transition<GoalState>, goal: &Arc<GoalState>) -> Transition<GoalState> {
        let w = &self.cfg.reward;
        let prev = goal_errors(&t.achieved_prev, goal);
        let next = goal_errors(&t.achieved, goal);
        let outcome = classify(w, &next, t.outcome.goal_independent_failure(), t.step);
        let reward = compute_reward(w, &prev, &next, &t.action, outcome);
        let range = self.latent_range();
        let swap = |obs: &[f64]| {
            let mut o = obs.to_vec();
            o[range.clone()].copy_from_slice(&goal.latent.0);
            o
        };
        Transition {
            obs: swap(&t.obs),
            action: t.action.clone(),
            reward,
            next_obs: swap(&t.next_obs),
            done: outcome.is_terminal(),
            outcome,
            step: t.step,
            achieved_prev: Arc::clone(&t.achieved_prev),
            achieved: Arc::clone(&t.achieved),
            desired: Arc::clone(goal),
        }
    }
}
