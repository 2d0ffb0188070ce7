use std::sync::Arc;

use crate::env::Outcome;
use crate::error::Result;
use crate::rng::Rng;

/// Goal-conditioned replay record. `achieved_prev` and `achieved` describe the
/// states before and after the action in goal space; together with `desired`
/// they are all a relabeler needs to recompute reward and termination.
#[derive(Debug)]
pub struct Transition<G> {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Bootstrap cut: the value of `next_obs` is not used in the TD target.
    pub done: bool,
    pub outcome: Outcome,
    /// Number of steps taken in the episode once this transition completes.
    pub step: usize,
    pub achieved_prev: Arc<G>,
    pub achieved: Arc<G>,
    pub desired: Arc<G>,
}

impl<G> Clone for Transition<G> {
    fn clone(&self) -> Self {
        Self {
            obs: self.obs.clone(),
            action: self.action.clone(),
            reward: self.reward,
            next_obs: self.next_obs.clone(),
            done: self.done,
            outcome: self.outcome,
            step: self.step,
            achieved_prev: Arc::clone(&self.achieved_prev),
            achieved: Arc::clone(&self.achieved),
            desired: Arc::clone(&self.desired),
        }
    }
}

/// One environment step as seen by the learner.
#[derive(Debug)]
pub struct EnvStep<G> {
    pub transition: Transition<G>,
    /// The episode ends here, whether or not `transition.done` is set.
    pub episode_over: bool,
    pub e_trans: f64,
    pub e_rot: f64,
}

/// The interface the training loop needs from an environment.
pub trait GoalEnv {
    type Goal;

    fn observation_dim(&self) -> usize;

    fn action_dim(&self) -> usize;

    fn reset_episode(&mut self, rng: &mut Rng) -> Result<Vec<f64>>;

    /// Takes `action` in `[-1, 1]^n`.
    fn step_transition(&mut self, action: &[f64]) -> Result<EnvStep<Self::Goal>>;

    /// `t` pursued `goal` instead: rewritten observations, reward, outcome and
    /// bootstrap flag, computed by the same code path as live steps.
    fn relabel(&self, t: &Transition<Self::Goal>, goal: &Arc<Self::Goal>) -> Transition<Self::Goal>;

    /// Whether the state `t` reached may serve as a hindsight goal. States
    /// ending in a goal-independent failure may not.
    fn achieved_is_goal(&self, t: &Transition<Self::Goal>) -> bool {
        t.outcome.goal_independent_failure().is_none()
    }
}

/// Produces complete demonstration episodes on an environment; `None` when
/// the attempt failed and should be discarded.
pub trait Demonstrator<E: GoalEnv> {
    fn demonstrate(&mut self, env: &mut E, rng: &mut Rng) -> Result<Option<Vec<Transition<E::Goal>>>>;
}
