use std::fmt;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{her_relabel, Batch, Demonstrator, GoalEnv, ReplayBuffer, Td3Agent, Td3Config, Transition};
use crate::env::Outcome;
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

/// Which of the training aids are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainVariant {
    pub use_exploration: bool,
    pub use_her: bool,
    pub use_demonstration: bool,
}

impl TrainVariant {
    pub const PURE_TD3: Self = Self::new(false, false, false);
    pub const TD3_EXPLORE: Self = Self::new(true, false, false);
    pub const TD3_HER_EXPLORE: Self = Self::new(true, true, false);
    pub const FULL: Self = Self::new(true, true, true);
    pub const NAMED: [Self; 4] = [Self::PURE_TD3, Self::TD3_EXPLORE, Self::TD3_HER_EXPLORE, Self::FULL];

    pub const fn new(use_exploration: bool, use_her: bool, use_demonstration: bool) -> Self {
        Self {
            use_exploration,
            use_her,
            use_demonstration,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::NAMED
            .into_iter()
            .find(|v| v.name() == Some(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (pure-td3, td3-explore, td3-her-explore, full)")))
    }

    pub fn name(&self) -> Option<&'static str> {
        match (self.use_exploration, self.use_her, self.use_demonstration) {
            (false, false, false) => Some("pure-td3"),
            (true, false, false) => Some("td3-explore"),
            (true, true, false) => Some("td3-her-explore"),
            (true, true, true) => Some("full"),
            _ => None,
        }
    }
}

impl fmt::Display for TrainVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(n) => f.write_str(n),
            None => write!(
                f,
                "explore={},her={},demo={}",
                self.use_exploration, self.use_her, self.use_demonstration
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub td3: Td3Config,
    /// Environment steps taken by the learner (demonstrations excluded).
    pub total_steps: u64,
    pub max_episodes: usize,
    /// Uniform random actions at the start, when the variant explores.
    pub exploration_steps: u64,
    /// No gradient step before this many environment steps.
    pub warmup_steps: u64,
    pub her_k: usize,
    pub demo_prob: f64,
    pub replay_capacity: usize,
    /// Episodes between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            td3: Td3Config::default(),
            total_steps: 1_000_000,
            max_episodes: usize::MAX,
            exploration_steps: 5_000,
            warmup_steps: 1_000,
            her_k: 4,
            demo_prob: 0.1,
            replay_capacity: 1_000_000,
            checkpoint_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.td3.validate()?;
        if !(0.0..=1.0).contains(&self.demo_prob) {
            return Err(Error::Config("demo probability must lie in [0, 1]".into()));
        }
        if self.replay_capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub episode: usize,
    /// Cumulative learner steps at the end of the episode.
    pub steps: u64,
    pub episode_return: f64,
    pub success: bool,
    pub e_trans_final: f64,
    pub e_rot_final: f64,
    pub outcome: Outcome,
    pub wall_seconds: f64,
}

pub const CURVE_HEADER: &str = "episode,steps,return,success,e_trans_final,e_rot_final,outcome,wall_seconds";

impl CurveRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.episode,
            self.steps,
            self.episode_return,
            u8::from(self.success),
            self.e_trans_final,
            self.e_rot_final,
            self.outcome,
            self.wall_seconds
        )
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return None;
        }
        let outcome = match f[6] {
            "success" => Outcome::Success,
            "running" => Outcome::Running,
            other => Outcome::Failure(crate::env::FailureReason::ALL.into_iter().find(|r| r.as_str() == other)?),
        };
        Some(Self {
            episode: f[0].parse().ok()?,
            steps: f[1].parse().ok()?,
            episode_return: f[2].parse().ok()?,
            success: f[3] == "1",
            e_trans_final: f[4].parse().ok()?,
            e_rot_final: f[5].parse().ok()?,
            outcome,
            wall_seconds: f[7].parse().ok()?,
        })
    }
}

pub fn write_curve(rows: &[CurveRow], path: &Path) -> Result<()> {
    let mut text = String::from(CURVE_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(Error::format(path, "unexpected curve header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| CurveRow::parse(l).ok_or_else(|| Error::format(path, format!("bad curve row {l:?}"))))
        .collect()
}

/// Result of running one episode with a fixed policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub episode_return: f64,
    pub steps: usize,
    pub outcome: Outcome,
    pub e_trans_final: f64,
    pub e_rot_final: f64,
}

impl EpisodeSummary {
    pub fn success(&self) -> bool {
        self.outcome.is_success()
    }
}

/// Resets `env` with `rng` and runs `policy` until the episode is over.
pub fn rollout<E: GoalEnv>(
    env: &mut E,
    rng: &mut Rng,
    mut policy: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<EpisodeSummary> {
    let mut obs = env.reset_episode(rng)?;
    let mut summary = EpisodeSummary {
        episode_return: 0.0,
        steps: 0,
        outcome: Outcome::Running,
        e_trans_final: f64::NAN,
        e_rot_final: f64::NAN,
    };
    loop {
        let a = policy(&obs)?;
        let s = env.step_transition(&a)?;
        summary.episode_return += s.transition.reward;
        summary.steps += 1;
        summary.outcome = s.transition.outcome;
        summary.e_trans_final = s.e_trans;
        summary.e_rot_final = s.e_rot;
        if s.episode_over {
            return Ok(summary);
        }
        obs = s.transition.next_obs;
    }
}

/// Deterministic-policy success rate over `episodes` resets drawn from
/// stream `"eval"` of `seed`.
pub fn evaluate_agent<E: GoalEnv>(env: &mut E, agent: &Td3Agent, episodes: usize, seed: u64) -> Result<f64> {
    if episodes == 0 {
        return Ok(0.0);
    }
    let mut ok = 0;
    for i in 0..episodes {
        let mut rng = substream(seed, "eval", i as u64);
        if rollout(env, &mut rng, |o| agent.act(o))?.success() {
            ok += 1;
        }
    }
    Ok(ok as f64 / episodes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Progress {
    steps: u64,
    episodes: usize,
    demo_episodes: usize,
    wall_seconds: f64,
}

/// Owns the agent and replay buffer for one training run.
pub struct Trainer<E: GoalEnv> {
    pub agent: Td3Agent,
    pub buffer: ReplayBuffer<E::Goal>,
    pub variant: TrainVariant,
    pub config: TrainConfig,
    pub curve: Vec<CurveRow>,
    steps: u64,
    demo_episodes: usize,
    /// Random-action transitions stored before the first gradient step.
    random_before_update: Option<u64>,
    wall_offset: f64,
    started: Instant,
}

impl<E: GoalEnv> Trainer<E> {
    pub fn new(env: &E, variant: TrainVariant, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(config.seed, "agent-init", 0);
        let agent = Td3Agent::new(env.observation_dim(), env.action_dim(), config.td3.clone(), &mut rng)?;
        Ok(Self {
            agent,
            buffer: ReplayBuffer::new(config.replay_capacity)?,
            variant,
            config,
            curve: Vec::new(),
            steps: 0,
            demo_episodes: 0,
            random_before_update: None,
            wall_offset: 0.0,
            started: Instant::now(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn episodes(&self) -> usize {
        self.curve.len()
    }

    pub fn demo_episodes(&self) -> usize {
        self.demo_episodes
    }

    /// Random-action transitions in the buffer when the first gradient step
    /// was taken, if one has been taken.
    pub fn random_transitions_before_first_update(&self) -> Option<u64> {
        self.random_before_update
    }

    fn exploration_len(&self) -> u64 {
        if self.variant.use_exploration {
            self.config.exploration_steps
        } else {
            0
        }
    }

    fn updates_enabled(&self) -> bool {
        let start = self.config.warmup_steps.max(self.exploration_len());
        let refill = self.config.warmup_steps.min(self.config.replay_capacity as u64);
        self.steps >= start && self.buffer.len() as u64 >= refill.max(1)
    }

    /// Runs one learner episode: act, step, store and update every step, then
    /// hindsight copies and (maybe) a demonstration at the end.
    pub fn run_episode<'d>(&mut self, env: &mut E, demo: Option<&mut (dyn Demonstrator<E> + 'd)>) -> Result<CurveRow> {
        let ep = self.curve.len() as u64;
        let seed = self.config.seed;
        let mut env_rng = substream(seed, "env", ep);
        let mut agent_rng = substream(seed, "agent", ep);
        let mut obs = env.reset_episode(&mut env_rng)?;
        let mut episode: Vec<Transition<E::Goal>> = Vec::new();
        let mut ret = 0.0;
        let (mut e_trans, mut e_rot);
        let outcome = loop {
            let a = if self.steps < self.exploration_len() {
                self.agent.random_action(&mut agent_rng)
            } else {
                self.agent.select_action(&obs, true, &mut agent_rng)?
            };
            let s = env.step_transition(&a)?;
            self.steps += 1;
            ret += s.transition.reward;
            e_trans = s.e_trans;
            e_rot = s.e_rot;
            obs.clone_from(&s.transition.next_obs);
            self.buffer.push(s.transition.clone());
            let outcome = s.transition.outcome;
            episode.push(s.transition);

            if self.updates_enabled() {
                if self.random_before_update.is_none() {
                    self.random_before_update = Some(self.steps.min(self.exploration_len()));
                }
                let batch = {
                    let ts = self.buffer.sample(self.config.td3.batch_size, &mut agent_rng)?;
                    Batch::from_transitions(&ts)?
                };
                self.agent.train_step(&batch, &mut agent_rng)?;
            }
            if s.episode_over {
                break outcome;
            }
        };

        if self.variant.use_her && self.config.her_k > 0 {
            let mut rng = substream(seed, "her", ep);
            let copies = her_relabel(env, &episode, self.config.her_k, &mut rng);
            self.buffer.extend(copies);
        }
        if let Some(demo) = demo.filter(|_| self.variant.use_demonstration) {
            let mut rng = substream(seed, "demo", ep);
            if rng.random_bool(self.config.demo_prob) {
                if let Some(ts) = demo.demonstrate(env, &mut rng)? {
                    self.buffer.extend(ts);
                    self.demo_episodes += 1;
                }
            }
        }

        let row = CurveRow {
            episode: self.curve.len(),
            steps: self.steps,
            episode_return: ret,
            success: outcome.is_success(),
            e_trans_final: e_trans,
            e_rot_final: e_rot,
            outcome,
            wall_seconds: self.wall_offset + self.started.elapsed().as_secs_f64(),
        };
        self.curve.push(row.clone());
        Ok(row)
    }

    /// Trains until the step or episode budget is spent or `on_episode`
    /// breaks. With `out`, the curve and periodic checkpoints are written
    /// there.
    pub fn train<'d>(
        &mut self,
        env: &mut E,
        mut demo: Option<&mut (dyn Demonstrator<E> + 'd)>,
        out: Option<&Path>,
        mut on_episode: impl FnMut(&mut Self, &mut E, &CurveRow) -> Result<ControlFlow<()>>,
    ) -> Result<()> {
        while self.steps < self.config.total_steps && self.curve.len() < self.config.max_episodes {
            let row = self.run_episode(env, demo.as_deref_mut())?;
            let every = self.config.checkpoint_every;
            if let Some(dir) = out {
                if every > 0 && self.curve.len() % every == 0 {
                    self.save_checkpoint(dir)?;
                }
            }
            if on_episode(self, env, &row)?.is_break() {
                break;
            }
        }
        if let Some(dir) = out {
            self.save_checkpoint(dir)?;
        }
        Ok(())
    }

    pub fn checkpoint_dir(out: &Path) -> PathBuf {
        out.join("checkpoint")
    }

    /// Agent, optimizers, counters and curve. The replay buffer is not
    /// saved; a resumed run refills it before updating again.
    pub fn save_checkpoint(&self, out: &Path) -> Result<()> {
        let dir = Self::checkpoint_dir(out);
        self.agent.save(&dir)?;
        let progress = Progress {
            steps: self.steps,
            episodes: self.curve.len(),
            demo_episodes: self.demo_episodes,
            wall_seconds: self.wall_offset + self.started.elapsed().as_secs_f64(),
        };
        let path = dir.join("progress.json");
        fs::write(&path, serde_json::to_string_pretty(&progress).expect("progress serializes"))
            .map_err(|e| Error::io(&path, e))?;
        write_curve(&self.curve, &out.join("curve.csv"))
    }

    /// Continues the run checkpointed under `out`.
    pub fn resume(env: &E, variant: TrainVariant, config: TrainConfig, out: &Path) -> Result<Self> {
        let dir = Self::checkpoint_dir(out);
        let path = dir.join("progress.json");
        if !path.exists() {
            return Err(Error::MissingArtifact(path.clone()));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let progress: Progress = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut t = Self::new(env, variant, config)?;
        t.agent = Td3Agent::load(&dir)?;
        if t.agent.obs_dim() != env.observation_dim() || t.agent.action_dim() != env.action_dim() {
            return Err(Error::Config("checkpointed policy does not match the environment".into()));
        }
        let mut curve = read_curve(&out.join("curve.csv"))?;
        curve.truncate(progress.episodes);
        t.curve = curve;
        t.steps = progress.steps;
        t.demo_episodes = progress.demo_episodes;
        t.wall_offset = progress.wall_seconds;
        t.random_before_update = (t.steps >= t.config.warmup_steps.max(t.exploration_len())).then_some(t.exploration_len());
        Ok(t)
    }
}
