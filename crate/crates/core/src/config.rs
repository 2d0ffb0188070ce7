//! Flat `section.key = value` run configuration.
//!
//! Every tunable default of the pipeline has a key here. Files hold one
//! assignment per line (`#` starts a comment); command-line overrides use the
//! same syntax. Unknown keys and unparsable values are rejected, and the fully
//! resolved configuration is written into each run directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::autoencoder::AeConfig;
use crate::dvs::{DvsConfig, InteractionSource};
use crate::env::{ActionBounds, EnvConfig, RewardWeights};
use crate::error::{Error, Result};
use crate::eval::StartMode;
use crate::rl::{Td3Config, TrainConfig, TrainVariant};
use crate::scene::dataset::DatasetConfig;
use crate::scene::{CameraModel, CapSampler};
use crate::toy::PointReachConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub near: f64,
    pub far: f64,
    pub supersample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub cameras: usize,
    pub objects: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub max_polar_deg: f64,
    pub object_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub setting: u8,
    pub control_hz: f64,
    pub max_linear: f64,
    pub max_angular: f64,
    pub cap_radius_min: f64,
    pub cap_radius_max: f64,
    pub cap_max_polar_deg: f64,
    pub reset_attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DvsSection {
    pub gain: f64,
    pub max_iterations: usize,
    pub mu: f64,
    pub interaction: String,
    /// Near-goal start radius (m) of demonstration episodes.
    pub demo_radius: f64,
    pub demo_rotation_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub variant: String,
    pub total_steps: u64,
    pub max_episodes: usize,
    pub exploration_steps: u64,
    pub warmup_steps: u64,
    pub her_k: usize,
    pub demo_prob: f64,
    pub replay_capacity: usize,
    pub checkpoint_every: usize,
    /// Episodes between in-training evaluations; 0 disables them.
    pub eval_every: usize,
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub trials: usize,
    /// `setting`, `cap`, `home`, `near-goal` or `offset`.
    pub start: String,
    pub near_trans: f64,
    pub near_rot_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub camera: CameraSection,
    pub dataset: DatasetSection,
    pub ae: AeConfig,
    pub reward: RewardWeights,
    pub env: EnvSection,
    pub dvs: DvsSection,
    pub td3: Td3Config,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub toy: PointReachConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let cam = CameraModel::default();
        let env = EnvConfig::default();
        let data = DatasetConfig::default();
        let dvs = DvsConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: 0,
            camera: CameraSection {
                width: cam.width,
                height: cam.height,
                fov_deg: 45.0,
                near: cam.near,
                far: cam.far,
                supersample: cam.supersample,
            },
            dataset: DatasetSection {
                cameras: data.cameras,
                objects: data.objects,
                radius_min: data.cap.radius_min,
                radius_max: data.cap.radius_max,
                max_polar_deg: data.cap.max_polar.to_degrees().round(),
                object_range: data.object_range,
            },
            ae: AeConfig::default(),
            reward: RewardWeights::default(),
            env: EnvSection {
                setting: 1,
                control_hz: env.control_hz,
                max_linear: env.bounds.max[0],
                max_angular: env.bounds.max[3],
                cap_radius_min: env.goal_cap.radius_min,
                cap_radius_max: env.goal_cap.radius_max,
                cap_max_polar_deg: env.goal_cap.max_polar.to_degrees().round(),
                reset_attempts: env.reset_attempts,
            },
            dvs: DvsSection {
                gain: dvs.gain,
                max_iterations: dvs.max_iterations,
                mu: dvs.mu,
                interaction: dvs.interaction.as_str().into(),
                demo_radius: 0.005,
                demo_rotation_deg: 2.0,
            },
            td3: Td3Config::default(),
            train: TrainSection {
                variant: "full".into(),
                total_steps: train.total_steps,
                max_episodes: 2000,
                exploration_steps: train.exploration_steps,
                warmup_steps: train.warmup_steps,
                her_k: train.her_k,
                demo_prob: train.demo_prob,
                replay_capacity: train.replay_capacity,
                checkpoint_every: train.checkpoint_every,
                eval_every: 0,
                eval_episodes: 20,
            },
            eval: EvalSection {
                trials: 100,
                start: "setting".into(),
                near_trans: 0.005,
                near_rot_deg: 2.0,
            },
            toy: PointReachConfig::default(),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// Parses `text` into a value shaped like `like`.
fn parse_like(key: &str, like: &Value, text: &str) -> Result<Value> {
    let bad = || Error::Config(format!("bad value {text:?} for {key}"));
    Ok(match like {
        Value::String(_) => Value::String(text.to_string()),
        Value::Bool(_) => Value::Bool(text.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_u64() || n.is_i64() => {
            if let Ok(u) = text.parse::<u64>() {
                Value::from(u)
            } else {
                Value::from(text.parse::<i64>().map_err(|_| bad())?)
            }
        }
        Value::Number(_) => {
            let f: f64 = text.parse().map_err(|_| bad())?;
            serde_json::Number::from_f64(f).map(Value::Number).ok_or_else(bad)?
        }
        Value::Array(items) => {
            let elem = items.first().cloned().unwrap_or(Value::from(0u64));
            if text.trim().is_empty() {
                Value::Array(Vec::new())
            } else {
                Value::Array(
                    text.split(',')
                        .map(|t| parse_like(key, &elem, t.trim()))
                        .collect::<Result<_>>()?,
                )
            }
        }
        Value::Null | Value::Object(_) => return Err(bad()),
    })
}

fn set_path(root: &mut Value, key: &str, v: Value) {
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(p) = parts.next() {
        let m: &mut Map<String, Value> = node.as_object_mut().expect("config tree is an object");
        if parts.peek().is_none() {
            m.insert(p.to_string(), v);
            return;
        }
        node = m.get_mut(p).expect("key exists");
    }
}

impl RunConfig {
    /// `(key, value)` pairs in a stable order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut flat = Vec::new();
        flatten("", &v, &mut flat);
        flat.into_iter().map(|(k, v)| (k, render(&v))).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let mut flat = Vec::new();
        flatten("", &tree, &mut flat);
        let like = flat
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        set_path(&mut tree, key, parse_like(key, &like, value.trim())?);
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Applies `key = value` / `key=value` assignments, one per line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Writes the resolved configuration as `run.cfg` into `dir`.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run.cfg");
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.env_config()?.validate()?;
        self.dvs_config()?.validate()?;
        self.train_config().validate()?;
        self.variant()?;
        self.start_mode()?;
        self.toy.validate()?;
        self.reward.validate()?;
        if !(1..=3).contains(&self.env.setting) {
            return Err(Error::Config(format!("env.setting must be 1, 2 or 3, got {}", self.env.setting)));
        }
        Ok(())
    }

    pub fn camera_model(&self) -> CameraModel {
        let c = &self.camera;
        CameraModel {
            supersample: c.supersample,
            ..CameraModel::with_vertical_fov(c.width, c.height, c.fov_deg.to_radians(), c.near, c.far)
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        let d = &self.dataset;
        DatasetConfig {
            cameras: d.cameras,
            objects: d.objects,
            seed: self.seed,
            cap: CapSampler {
                radius_min: d.radius_min,
                radius_max: d.radius_max,
                max_polar: d.max_polar_deg.to_radians(),
            },
            object_range: d.object_range,
            camera: self.camera_model(),
            ..DatasetConfig::default()
        }
    }

    pub fn ae_config(&self) -> AeConfig {
        AeConfig {
            seed: self.seed,
            ..self.ae.clone()
        }
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let e = &self.env;
        let cap = CapSampler {
            radius_min: e.cap_radius_min,
            radius_max: e.cap_radius_max,
            max_polar: e.cap_max_polar_deg.to_radians(),
        };
        let cfg = EnvConfig {
            camera: self.camera_model(),
            reward: self.reward,
            control_hz: e.control_hz,
            bounds: ActionBounds::symmetric(e.max_linear, e.max_angular),
            goal_cap: cap,
            start_cap: cap,
            reset_attempts: e.reset_attempts,
            ..EnvConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dvs_config(&self) -> Result<DvsConfig> {
        Ok(DvsConfig {
            gain: self.dvs.gain,
            max_iterations: self.dvs.max_iterations,
            mu: self.dvs.mu,
            convergence_trans: self.reward.phi_trans,
            interaction: InteractionSource::parse(&self.dvs.interaction)?,
        })
    }

    pub fn variant(&self) -> Result<TrainVariant> {
        TrainVariant::parse(&self.train.variant)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            td3: self.td3.clone(),
            total_steps: t.total_steps,
            max_episodes: t.max_episodes,
            exploration_steps: t.exploration_steps,
            warmup_steps: t.warmup_steps,
            her_k: t.her_k,
            demo_prob: t.demo_prob,
            replay_capacity: t.replay_capacity,
            checkpoint_every: t.checkpoint_every,
            seed: self.seed,
        }
    }

    pub fn start_mode(&self) -> Result<StartMode> {
        use crate::env::StartSpec;
        let e = &self.eval;
        let (trans, rot) = (e.near_trans, e.near_rot_deg.to_radians());
        Ok(match e.start.as_str() {
            "setting" => StartMode::Setting,
            "cap" => StartMode::Spec { spec: StartSpec::Cap },
            "home" => StartMode::Spec { spec: StartSpec::Home },
            "near-goal" => StartMode::Spec {
                spec: StartSpec::NearGoal { trans, rot },
            },
            "offset" => StartMode::Spec {
                spec: StartSpec::Offset { trans, rot },
            },
            other => {
                return Err(Error::Config(format!(
                    "eval.start must be setting, cap, home, near-goal or offset, got {other:?}"
                )))
            }
        })
    }
}
