//! Point-reach: a renderer-free goal-reaching task with the same transition,
//! reward and relabeling contract as the servoing env, for fast checks of the
//! learning stack.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{FailureReason, Outcome};
use crate::error::{Error, Result};
use crate::rl::{Demonstrator, EnvStep, GoalEnv, Transition};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointReachConfig {
    pub dim: usize,
    pub dt: f64,
    /// Largest speed along each axis; actions in `[-1, 1]` are scaled by it.
    pub a_max: f64,
    pub success_radius: f64,
    /// The arena is `[-arena, arena]^dim`; leaving it fails the episode.
    pub arena: f64,
    /// Starts and goals are drawn from `[-spawn, spawn]^dim`.
    pub spawn: f64,
    pub max_steps: usize,
    /// End at `max_steps` with a failure penalty and a bootstrap cut instead
    /// of a plain truncation.
    pub max_steps_is_failure: bool,
    /// Weight of the distance decrease.
    pub phi1: f64,
    pub phi4: f64,
    pub e_step: f64,
    pub success_reward: f64,
    pub failure_reward: f64,
}

impl Default for PointReachConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            dt: 0.1,
            a_max: 1.0,
            success_radius: 0.05,
            arena: 1.0,
            spawn: 0.9,
            max_steps: 50,
            max_steps_is_failure: false,
            phi1: 100.0,
            phi4: 0.1,
            e_step: 1.0,
            success_reward: 100.0,
            failure_reward: -100.0,
        }
    }
}

impl PointReachConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dim > 0
            && self.dt > 0.0
            && self.a_max > 0.0
            && self.success_radius >= 0.0
            && self.spawn > 0.0
            && self.spawn <= self.arena
            && self.max_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid point-reach config {self:?}")))
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct PointReachEnv {
    pub cfg: PointReachConfig,
    position: Arc<Vec<f64>>,
    goal: Arc<Vec<f64>>,
    steps: usize,
    outcome: Outcome,
    started: bool,
}

impl PointReachEnv {
    pub fn new(cfg: PointReachConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            position: Arc::new(vec![0.0; cfg.dim]),
            goal: Arc::new(vec![0.0; cfg.dim]),
            cfg,
            steps: 0,
            outcome: Outcome::Running,
            started: false,
        })
    }

    pub fn position(&self) -> &[f64] {
        &self.position
    }

    pub fn goal(&self) -> &[f64] {
        &self.goal
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    /// Starts an episode at an explicit start and goal.
    pub fn begin(&mut self, start: Vec<f64>, goal: Vec<f64>) -> Result<Vec<f64>> {
        if start.len() != self.cfg.dim || goal.len() != self.cfg.dim {
            return Err(Error::Dimension {
                context: "point-reach start/goal",
                expected: self.cfg.dim,
                actual: start.len().max(goal.len()),
            });
        }
        self.position = Arc::new(start);
        self.goal = Arc::new(goal);
        self.steps = 0;
        self.outcome = Outcome::Running;
        self.started = true;
        Ok(self.observation())
    }

    /// `[position, goal]`.
    pub fn observation(&self) -> Vec<f64> {
        let mut o = self.position.to_vec();
        o.extend_from_slice(&self.goal);
        o
    }

    fn outside_arena(&self, p: &[f64]) -> bool {
        p.iter().any(|v| v.abs() > self.cfg.arena)
    }

    /// Velocity for a normalized action.
    pub fn velocity(&self, action: &[f64]) -> Vec<f64> {
        action.iter().map(|a| a.clamp(-1.0, 1.0) * self.cfg.a_max).collect()
    }

    fn classify(&self, achieved: &[f64], goal: &[f64], step: usize) -> Outcome {
        if self.outside_arena(achieved) {
            Outcome::Failure(FailureReason::DivergedTrans)
        } else if distance(achieved, goal) < self.cfg.success_radius {
            Outcome::Success
        } else if step >= self.cfg.max_steps {
            Outcome::Failure(FailureReason::MaxSteps)
        } else {
            Outcome::Running
        }
    }

    /// Reward for moving from `prev` to `next` while pursuing `goal`.
    pub fn reward(&self, prev: &[f64], next: &[f64], goal: &[f64], action: &[f64], outcome: Outcome) -> f64 {
        let c = &self.cfg;
        let shaped = c.phi1 * (distance(prev, goal) - distance(next, goal)) - c.phi4 * c.e_step;
        let terminal = match outcome {
            Outcome::Success => c.success_reward - norm(action),
            Outcome::Failure(FailureReason::MaxSteps) if !c.max_steps_is_failure => 0.0,
            Outcome::Failure(_) => c.failure_reward,
            Outcome::Running => 0.0,
        };
        shaped + terminal
    }

    fn is_done(&self, outcome: Outcome) -> bool {
        match outcome {
            Outcome::Failure(FailureReason::MaxSteps) => self.cfg.max_steps_is_failure,
            o => o.is_terminal(),
        }
    }
}

impl GoalEnv for PointReachEnv {
    type Goal = Vec<f64>;

    fn observation_dim(&self) -> usize {
        2 * self.cfg.dim
    }

    fn action_dim(&self) -> usize {
        self.cfg.dim
    }

    fn reset_episode(&mut self, rng: &mut Rng) -> Result<Vec<f64>> {
        let s = self.cfg.spawn;
        let mut draw = || (0..self.cfg.dim).map(|_| rng.random_range(-s..=s)).collect::<Vec<f64>>();
        loop {
            let start = draw();
            let goal = draw();
            if distance(&start, &goal) >= self.cfg.success_radius {
                return self.begin(start, goal);
            }
        }
    }

    fn step_transition(&mut self, action: &[f64]) -> Result<EnvStep<Vec<f64>>> {
        if !self.started {
            return Err(Error::Protocol("step before reset".into()));
        }
        if self.outcome.is_terminal() {
            return Err(Error::Protocol(format!("step after the episode ended ({})", self.outcome)));
        }
        if action.len() != self.cfg.dim {
            return Err(Error::Dimension {
                context: "point-reach action",
                expected: self.cfg.dim,
                actual: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("point-reach action".into()));
        }
        let obs = self.observation();
        let prev = Arc::clone(&self.position);
        let v = self.velocity(action);
        let next: Vec<f64> = prev.iter().zip(&v).map(|(p, v)| p + v * self.cfg.dt).collect();
        self.steps += 1;
        let outcome = self.classify(&next, &self.goal, self.steps);
        let reward = self.reward(&prev, &next, &self.goal, action, outcome);
        self.position = Arc::new(next);
        self.outcome = outcome;
        let e = distance(&self.position, &self.goal);
        Ok(EnvStep {
            transition: Transition {
                obs,
                action: action.to_vec(),
                reward,
                next_obs: self.observation(),
                done: self.is_done(outcome),
                outcome,
                step: self.steps,
                achieved_prev: prev,
                achieved: Arc::clone(&self.position),
                desired: Arc::clone(&self.goal),
            },
            episode_over: outcome.is_terminal(),
            e_trans: e,
            e_rot: 0.0,
        })
    }

    fn relabel(&self, t: &Transition<Vec<f64>>, goal: &Arc<Vec<f64>>) -> Transition<Vec<f64>> {
        let outcome = self.classify(&t.achieved, goal, t.step);
        let reward = self.reward(&t.achieved_prev, &t.achieved, goal, &t.action, outcome);
        let n = self.cfg.dim;
        let swap = |o: &[f64]| {
            let mut o = o.to_vec();
            o[n..].copy_from_slice(goal);
            o
        };
        Transition {
            obs: swap(&t.obs),
            action: t.action.clone(),
            reward,
            next_obs: swap(&t.next_obs),
            done: self.is_done(outcome),
            outcome,
            step: t.step,
            achieved_prev: Arc::clone(&t.achieved_prev),
            achieved: Arc::clone(&t.achieved),
            desired: Arc::clone(goal),
        }
    }

    fn achieved_is_goal(&self, t: &Transition<Vec<f64>>) -> bool {
        !self.outside_arena(&t.achieved)
    }
}

/// Saturated proportional control with gain `1 / dt`: every axis moves at
/// full speed until one step from the goal, then lands on it.
pub fn reach_action(env: &PointReachEnv) -> Vec<f64> {
    let c = &env.cfg;
    env.goal
        .iter()
        .zip(env.position.iter())
        .map(|(g, p)| ((g - p) / (c.a_max * c.dt)).clamp(-1.0, 1.0))
        .collect()
}

/// Demonstrations from [`reach_action`]; only successful episodes are kept.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReachDemonstrator;

impl Demonstrator<PointReachEnv> for ReachDemonstrator {
    fn demonstrate(&mut self, env: &mut PointReachEnv, rng: &mut Rng) -> Result<Option<Vec<Transition<Vec<f64>>>>> {
        env.reset_episode(rng)?;
        let mut out = Vec::new();
        loop {
            let s = env.step_transition(&reach_action(env))?;
            let over = s.episode_over;
            out.push(s.transition);
            if over {
                return Ok(env.outcome().is_success().then_some(out));
            }
        }
    }
}
