use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Transition;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_adam, load_net, save_adam, save_net};
use crate::nn::{Activation, AdamConfig, AdamState, MlpNet, Tensor2};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Td3Config {
    /// Discount η.
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    pub explore_noise: f64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Output layers start uniform in `[-s, s]` with zero bias, which keeps
    /// the initial policy out of tanh saturation; 0 keeps Glorot init.
    pub final_layer_init: f64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            explore_noise: 0.1,
            target_noise: 0.2,
            noise_clip: 0.5,
            batch_size: 256,
            hidden: vec![256, 256],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            final_layer_init: 3e-3,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("td3 gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("td3 tau must lie in [0, 1]");
        }
        if self.policy_delay == 0 {
            return bad("td3 policy delay must be at least 1");
        }
        if self.explore_noise < 0.0 || self.target_noise < 0.0 || self.noise_clip < 0.0 {
            return bad("td3 noise scales must be non-negative");
        }
        if self.batch_size == 0 || self.hidden.contains(&0) {
            return bad("td3 batch size and hidden widths must be positive");
        }
        if !(self.final_layer_init >= 0.0) {
            return bad("td3 final layer init scale must be non-negative");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("td3 learning rates must be positive");
        }
        Ok(())
    }
}

/// Column-stacked minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Tensor2,
    pub actions: Tensor2,
    pub rewards: Vec<f64>,
    pub next_obs: Tensor2,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn from_transitions<G>(ts: &[&Transition<G>]) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::Protocol("empty minibatch".into()));
        }
        let rows = |f: fn(&Transition<G>) -> &[f64]| Tensor2::from_rows(&ts.iter().map(|t| f(t)).collect::<Vec<_>>());
        Ok(Self {
            obs: rows(|t| &t.obs)?,
            actions: rows(|t| &t.action)?,
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_obs: rows(|t| &t.next_obs)?,
            done: ts.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// `r + (1 - done) * gamma * min(q1, q2)`.
pub fn clipped_double_q_target(reward: f64, done: bool, gamma: f64, q1: f64, q2: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q1.min(q2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticLosses {
    pub critic1: f64,
    pub critic2: f64,
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub config: Td3Config,
    pub actor: MlpNet,
    pub critic1: MlpNet,
    pub critic2: MlpNet,
    pub actor_target: MlpNet,
    pub critic1_target: MlpNet,
    pub critic2_target: MlpNet,
    pub actor_opt: AdamState,
    pub critic1_opt: AdamState,
    pub critic2_opt: AdamState,
    /// Critic updates performed so far.
    pub updates: u64,
}

#[derive(Serialize, Deserialize)]
struct AgentMeta {
    config: Td3Config,
    updates: u64,
}

const NETS: [&str; 6] = [
    "actor",
    "critic1",
    "critic2",
    "actor_target",
    "critic1_target",
    "critic2_target",
];

impl Td3Agent {
    pub fn new(obs_dim: usize, action_dim: usize, config: Td3Config, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&config.hidden);
        actor_sizes.push(action_dim);
        let mut critic_sizes = vec![obs_dim + action_dim];
        critic_sizes.extend(&config.hidden);
        critic_sizes.push(1);

        let mut actor = MlpNet::new(&actor_sizes, Activation::Relu, Activation::Tanh, rng)?;
        let mut critic1 = MlpNet::new(&critic_sizes, Activation::Relu, Activation::Identity, rng)?;
        let mut critic2 = MlpNet::new(&critic_sizes, Activation::Relu, Activation::Identity, rng)?;
        if config.final_layer_init > 0.0 {
            let s = config.final_layer_init;
            for net in [&mut actor, &mut critic1, &mut critic2] {
                let last = net.params_mut().layers.last_mut().expect("at least one layer");
                for w in last.weights.data_mut() {
                    *w = rng.random_range(-s..=s);
                }
            }
        }
        Ok(Self {
            actor_opt: AdamState::new(&actor, AdamConfig::with_learning_rate(config.actor_lr)),
            critic1_opt: AdamState::new(&critic1, AdamConfig::with_learning_rate(config.critic_lr)),
            critic2_opt: AdamState::new(&critic2, AdamConfig::with_learning_rate(config.critic_lr)),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            config,
            updates: 0,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    /// Deterministic policy output.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim() {
            return Err(Error::Dimension {
                context: "policy observation",
                expected: self.obs_dim(),
                actual: obs.len(),
            });
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy observation".into()));
        }
        Ok(self.actor.predict(&Tensor2::row_vector(obs))?.into_data())
    }

    /// Policy output plus, when exploring, Gaussian noise; clipped to [-1, 1].
    pub fn select_action(&self, obs: &[f64], explore: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        let mut a = self.act(obs)?;
        if explore && self.config.explore_noise > 0.0 {
            let noise = Normal::new(0.0, self.config.explore_noise).expect("valid sigma");
            for v in &mut a {
                *v += noise.sample(rng);
            }
        }
        for v in &mut a {
            *v = v.clamp(-1.0, 1.0);
        }
        Ok(a)
    }

    pub fn random_action(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.action_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }

    /// Smoothed target action for each next observation.
    fn target_actions(&self, next_obs: &Tensor2, rng: &mut Rng) -> Result<Tensor2> {
        let mut a = self.actor_target.predict(next_obs)?;
        let c = self.config.noise_clip;
        let noise = (self.config.target_noise > 0.0).then(|| Normal::new(0.0, self.config.target_noise).expect("valid sigma"));
        for v in a.data_mut() {
            let eps = noise.map_or(0.0, |n| n.sample(rng).clamp(-c, c));
            *v = (*v + eps).clamp(-1.0, 1.0);
        }
        Ok(a)
    }

    pub fn td_target(&self, batch: &Batch, rng: &mut Rng) -> Result<Vec<f64>> {
        let a = self.target_actions(&batch.next_obs, rng)?;
        let sa = batch.next_obs.hstack(&a)?;
        let q1 = self.critic1_target.predict(&sa)?;
        let q2 = self.critic2_target.predict(&sa)?;
        Ok((0..batch.len())
            .map(|i| clipped_double_q_target(batch.rewards[i], batch.done[i], self.config.gamma, q1.data()[i], q2.data()[i]))
            .collect())
    }

    /// One Adam step per critic on the mean squared error against `targets`.
    pub fn update_critics(&mut self, batch: &Batch, targets: &[f64]) -> Result<CriticLosses> {
        let sa = batch.obs.hstack(&batch.actions)?;
        let n = batch.len() as f64;
        let mut losses = [0.0; 2];
        for (k, (net, opt)) in [
            (&mut self.critic1, &mut self.critic1_opt),
            (&mut self.critic2, &mut self.critic2_opt),
        ]
        .into_iter()
        .enumerate()
        {
            let q = net.forward(&sa)?;
            let mut grad = Tensor2::zeros(batch.len(), 1);
            let mut loss = 0.0;
            for (i, (&qi, &yi)) in q.data().iter().zip(targets).enumerate() {
                let d = qi - yi;
                loss += d * d / n;
                grad.data_mut()[i] = 2.0 * d / n;
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "critic{} loss after {} updates (max |target| {:.3e})",
                    k + 1,
                    self.updates,
                    targets.iter().fold(0.0f64, |m, v| m.max(v.abs()))
                )));
            }
            let bp = net.backward(&grad)?;
            net.clear_cache();
            opt.step(net, &bp.params)?;
            losses[k] = loss;
        }
        Ok(CriticLosses {
            critic1: losses[0],
            critic2: losses[1],
        })
    }

    /// Gradient of `-mean q1(s, pi(s))` with respect to the actor parameters.
    pub fn actor_gradient(&mut self, obs: &Tensor2) -> Result<(f64, crate::nn::Parameters)> {
        let n = obs.rows() as f64;
        let a = self.actor.forward(obs)?;
        let sa = obs.hstack(&a)?;
        let q = self.critic1.forward(&sa)?;
        let loss = -q.mean();
        let grad_q = Tensor2::filled(obs.rows(), 1, -1.0 / n);
        let dq = self.critic1.backward(&grad_q)?;
        self.critic1.clear_cache();
        let da = dq.input.columns(self.obs_dim(), sa.cols());
        let bp = self.actor.backward(&da)?;
        self.actor.clear_cache();
        Ok((loss, bp.params))
    }

    /// On every `policy_delay`-th step: one actor step, then Polyak-average
    /// all three targets. Returns the actor loss when an update happened.
    pub fn update_actor_and_targets(&mut self, batch: &Batch, step: u64) -> Result<Option<f64>> {
        if step % self.config.policy_delay != 0 {
            return Ok(None);
        }
        let (loss, grads) = self.actor_gradient(&batch.obs)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("actor loss after {} updates", self.updates)));
        }
        self.actor_opt.step(&mut self.actor, &grads)?;
        let tau = self.config.tau;
        self.actor_target.soft_update(&self.actor, tau)?;
        self.critic1_target.soft_update(&self.critic1, tau)?;
        self.critic2_target.soft_update(&self.critic2, tau)?;
        Ok(Some(loss))
    }

    /// Critic update followed by the (possibly skipped) delayed actor update.
    pub fn train_step(&mut self, batch: &Batch, rng: &mut Rng) -> Result<(CriticLosses, Option<f64>)> {
        let y = self.td_target(batch, rng)?;
        let losses = self.update_critics(batch, &y)?;
        self.updates += 1;
        let actor = self.update_actor_and_targets(batch, self.updates)?;
        Ok((losses, actor))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, net) in NETS.iter().zip(self.nets()) {
            save_net(net, &dir.join(format!("{name}.json")))?;
        }
        save_adam(&self.actor_opt, &self.actor, &dir.join("actor_adam.json"))?;
        save_adam(&self.critic1_opt, &self.critic1, &dir.join("critic1_adam.json"))?;
        save_adam(&self.critic2_opt, &self.critic2, &dir.join("critic2_adam.json"))?;
        let meta = AgentMeta {
            config: self.config.clone(),
            updates: self.updates,
        };
        let path = dir.join("td3.json");
        fs::write(&path, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("td3.json");
        if !path.exists() {
            return Err(Error::MissingArtifact(path.clone()));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: AgentMeta = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let net = |name: &str| load_net(&dir.join(format!("{name}.json")));
        let agent = Self {
            actor: net("actor")?,
            critic1: net("critic1")?,
            critic2: net("critic2")?,
            actor_target: net("actor_target")?,
            critic1_target: net("critic1_target")?,
            critic2_target: net("critic2_target")?,
            actor_opt: load_adam(&dir.join("actor_adam.json"))?,
            critic1_opt: load_adam(&dir.join("critic1_adam.json"))?,
            critic2_opt: load_adam(&dir.join("critic2_adam.json"))?,
            config: meta.config,
            updates: meta.updates,
        };
        agent.config.validate()?;
        Ok(agent)
    }

    fn nets(&self) -> [&MlpNet; 6] {
        [
            &self.actor,
            &self.critic1,
            &self.critic2,
            &self.actor_target,
            &self.critic1_target,
            &self.critic2_target,
        ]
    }
}
