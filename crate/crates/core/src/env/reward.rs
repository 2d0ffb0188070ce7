use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    DivergedTrans,
    DivergedRot,
    Singularity,
    JointLimit,
    Collision,
    OutOfFov,
    MaxSteps,
}

impl FailureReason {
    pub const ALL: [FailureReason; 7] = [
        FailureReason::DivergedTrans,
        FailureReason::DivergedRot,
        FailureReason::Singularity,
        FailureReason::JointLimit,
        FailureReason::Collision,
        FailureReason::OutOfFov,
        FailureReason::MaxSteps,
    ];

    /// Failures that depend only on the robot state, not on which goal is
    /// pursued. They survive goal relabeling.
    pub fn is_goal_independent(self) -> bool {
        matches!(
            self,
            FailureReason::Singularity
                | FailureReason::JointLimit
                | FailureReason::Collision
                | FailureReason::OutOfFov
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::DivergedTrans => "diverged-trans",
            FailureReason::DivergedRot => "diverged-rot",
            FailureReason::Singularity => "singularity",
            FailureReason::JointLimit => "joint-limit",
            FailureReason::Collision => "collision",
            FailureReason::OutOfFov => "out-of-fov",
            FailureReason::MaxSteps => "max-steps",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "reason")]
pub enum Outcome {
    Running,
    Success,
    Failure(FailureReason),
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }

    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }

    /// The failure, if it does not depend on which goal was pursued.
    pub fn goal_independent_failure(self) -> Option<FailureReason> {
        match self {
            Outcome::Failure(r) if r.is_goal_independent() => Some(r),
            _ => None,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Running => f.write_str("running"),
            Outcome::Success => f.write_str("success"),
            Outcome::Failure(r) => f.write_str(r.as_str()),
        }
    }
}

/// Reward weights, success thresholds and failure bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
    pub phi4: f64,
    /// Constant per-step error multiplied by `phi4`.
    pub e_step: f64,
    pub phi_trans: f64,
    pub phi_rot: f64,
    pub d_trans: f64,
    pub d_rot: f64,
    pub phi_jacobian: f64,
    pub max_steps: usize,
    pub success_reward: f64,
    pub failure_reward: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            phi1: 100.0,
            phi2: 10.0,
            phi3: 10.0,
            phi4: 0.1,
            e_step: 1.0,
            phi_trans: 0.002,
            phi_rot: 0.05,
            d_trans: 1.0,
            d_rot: 2.5,
            phi_jacobian: 1e-4,
            max_steps: 200,
            success_reward: 100.0,
            failure_reward: -100.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.phi1, self.phi2, self.phi3, self.phi4];
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("reward weights must be nonnegative".into()));
        }
        if !(self.phi_trans < self.d_trans && self.phi_rot < self.d_rot) {
            return Err(Error::Config(
                "success thresholds must be below the divergence bounds".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max steps must be positive".into()));
        }
        Ok(())
    }
}

/// Translation, rotation and image error of one state against a goal.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Errors {
    pub trans: f64,
    pub rot: f64,
    pub img: f64,
}

/// Outcome of reaching a state with errors `e` after `step` steps, given any
/// goal-independent failure already detected for that state.
pub fn classify(w: &RewardWeights, e: &Errors, hard: Option<FailureReason>, step: usize) -> Outcome {
    if let Some(r) = hard {
        return Outcome::Failure(r);
    }
    if e.trans < w.phi_trans && e.rot < w.phi_rot {
        Outcome::Success
    } else if e.trans > w.d_trans {
        Outcome::Failure(FailureReason::DivergedTrans)
    } else if e.rot > w.d_rot {
        Outcome::Failure(FailureReason::DivergedRot)
    } else if step >= w.max_steps {
        Outcome::Failure(FailureReason::MaxSteps)
    } else {
        Outcome::Running
    }
}

/// Potential-style shaping on the three error decreases, a constant step
/// penalty and the terminal bonus or penalty.
pub fn compute_reward(w: &RewardWeights, prev: &Errors, next: &Errors, action: &[f64], outcome: Outcome) -> f64 {
    let shaping = w.phi1 * (prev.trans - next.trans)
        + w.phi2 * (prev.rot - next.rot)
        + w.phi3 * (prev.img - next.img)
        - w.phi4 * w.e_step;
    shaping + terminal_reward(w, action, outcome)
}

pub fn terminal_reward(w: &RewardWeights, action: &[f64], outcome: Outcome) -> f64 {
    match outcome {
        Outcome::Running => 0.0,
        Outcome::Success => w.success_reward - action.iter().map(|a| a * a).sum::<f64>().sqrt(),
        Outcome::Failure(_) => w.failure_reward,
    }
}

/// Mean squared difference of two equally sized normalized images.
pub fn image_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "image_error on images of different size");
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
