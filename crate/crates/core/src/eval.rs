//! Seeded, paired evaluation of servoing controllers: success rates, final
//! error histograms and failure breakdowns, plus side-by-side comparison with
//! Wilson intervals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::AeModel;
use crate::dvs::{run_dvs_servo, DvsConfig};
use crate::env::{EnvConfig, Outcome, ServoEnv, Setting, StartSpec};
use crate::error::{Error, Result};
use crate::rl::Td3Agent;
use crate::rng::substream;

/// Something that can drive a freshly reset episode to its end.
pub trait Controller: Send + Sync {
    fn label(&self) -> String;

    fn run_episode(&self, trial: usize, env: &mut ServoEnv) -> Result<()>;
}

/// The deterministic actor of a trained agent.
pub struct PolicyController {
    pub agent: Td3Agent,
}

impl Controller for PolicyController {
    fn label(&self) -> String {
        "rl".into()
    }

    fn run_episode(&self, _trial: usize, env: &mut ServoEnv) -> Result<()> {
        let mut obs = env.observation().flatten();
        while !env.outcome().is_some_and(Outcome::is_terminal) {
            let a = self.agent.act(&obs)?;
            obs = env.step(&a)?.observation.flatten();
        }
        Ok(())
    }
}

pub struct DvsController {
    pub config: DvsConfig,
}

impl Controller for DvsController {
    fn label(&self) -> String {
        "dvs".into()
    }

    fn run_episode(&self, _trial: usize, env: &mut ServoEnv) -> Result<()> {
        run_dvs_servo(env, &self.config).map(|_| ())
    }
}

/// How each trial's start is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StartMode {
    /// Whatever the setting prescribes.
    Setting,
    Spec { spec: StartSpec },
}

impl StartMode {
    pub fn label(&self) -> String {
        match self {
            StartMode::Setting => "setting".into(),
            StartMode::Spec { spec } => match spec {
                StartSpec::Home => "home".into(),
                StartSpec::Cap => "cap".into(),
                StartSpec::NearGoal { trans, rot } => format!("near-goal({trans},{rot})"),
                StartSpec::Offset { trans, rot } => format!("offset({trans},{rot})"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub setting: u8,
    pub start: StartMode,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub outcome: Outcome,
    pub steps: usize,
    pub e_trans: f64,
    pub e_rot: f64,
}

/// Fixed-width bins from 0 to `max`, with one overflow count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub max: f64,
    pub counts: Vec<usize>,
    pub overflow: usize,
}

impl Histogram {
    pub fn new(bin_width: f64, max: f64) -> Self {
        let bins = (max / bin_width).round() as usize;
        Self {
            bin_width,
            max,
            counts: vec![0; bins],
            overflow: 0,
        }
    }

    pub fn add(&mut self, v: f64) {
        let i = (v / self.bin_width).floor();
        if i >= 0.0 && (i as usize) < self.counts.len() {
            self.counts[i as usize] += 1;
        } else {
            self.overflow += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.overflow
    }

    /// `(low, high, count)` per regular bin.
    pub fn bins(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let w = self.bin_width;
        self.counts
            .iter()
            .enumerate()
            .map(move |(i, &c)| (i as f64 * w, (i + 1) as f64 * w, c))
    }
}

pub const TRANS_BIN: f64 = 0.0005;
pub const TRANS_MAX: f64 = 0.005;
pub const ROT_BIN: f64 = 0.01;
pub const ROT_MAX: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub protocol: Protocol,
    pub successes: usize,
    pub success_rate: f64,
    /// Final errors of successful trials only.
    pub trans_hist: Histogram,
    pub rot_hist: Histogram,
    /// Failed trials by reason.
    pub failures: BTreeMap<String, usize>,
    pub mean_steps: f64,
    pub trials: Vec<TrialResult>,
}

impl EvalReport {
    pub fn from_trials(method: &str, protocol: Protocol, trials: Vec<TrialResult>) -> Self {
        let mut trans_hist = Histogram::new(TRANS_BIN, TRANS_MAX);
        let mut rot_hist = Histogram::new(ROT_BIN, ROT_MAX);
        let mut failures = BTreeMap::new();
        let mut successes = 0;
        for t in &trials {
            if t.outcome.is_success() {
                successes += 1;
                trans_hist.add(t.e_trans);
                rot_hist.add(t.e_rot);
            } else {
                *failures.entry(t.outcome.to_string()).or_insert(0) += 1;
            }
        }
        let n = trials.len();
        let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        Self {
            method: method.into(),
            protocol,
            successes,
            success_rate: rate(successes),
            trans_hist,
            rot_hist,
            failures,
            mean_steps: if n == 0 {
                0.0
            } else {
                trials.iter().map(|t| t.steps as f64).sum::<f64>() / n as f64
            },
            trials,
        }
    }

    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    pub fn wilson(&self) -> (f64, f64) {
        wilson_interval(self.successes, self.n_trials(), 1.96)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Wilson score interval for `k` successes in `n` trials; `(0, 1)` when empty.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Runs `protocol.trials` independent episodes. Trial `i` resets from
/// stream `("eval", i)` of the protocol seed, so two controllers evaluated
/// with the same protocol see identical starts and goals, and the thread
/// count never changes the report.
pub fn evaluate(
    env_cfg: &EnvConfig,
    ae: Option<Arc<AeModel>>,
    controller: &dyn Controller,
    protocol: &Protocol,
) -> Result<EvalReport> {
    let setting = Setting::numbered(protocol.setting)?;
    env_cfg.validate()?;
    let trials = (0..protocol.trials)
        .into_par_iter()
        .map(|i| {
            let mut env = ServoEnv::new(env_cfg.clone(), ae.clone(), setting)?;
            let mut rng = substream(protocol.seed, "eval", i as u64);
            match protocol.start {
                StartMode::Setting => env.reset(&mut rng)?,
                StartMode::Spec { spec } => env.reset_with(spec, &mut rng)?,
            };
            controller.run_episode(i, &mut env)?;
            let errors = env.errors().expect("episode started");
            Ok(TrialResult {
                trial: i,
                outcome: env.outcome().expect("episode started"),
                steps: env.steps(),
                e_trans: errors.trans,
                e_rot: errors.rot,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_trials(&controller.label(), protocol.clone(), trials))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub protocol: Protocol,
    pub rate_a: f64,
    pub rate_b: f64,
    pub ci_a: (f64, f64),
    pub ci_b: (f64, f64),
    /// `rate_a - rate_b`.
    pub difference: f64,
    /// The two 95% intervals do not overlap.
    pub separated: bool,
    /// Trials where exactly one side succeeded: `(a only, b only)`.
    pub discordant: (usize, usize),
    /// `(low, high, count a, count b)`; the last entry is the overflow bin
    /// with `high = low`.
    pub trans_bins: Vec<(f64, f64, usize, usize)>,
    pub rot_bins: Vec<(f64, f64, usize, usize)>,
}

pub fn compare(a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    if a.protocol != b.protocol || a.n_trials() != b.n_trials() {
        return Err(Error::Protocol(format!(
            "cannot compare reports with different protocols: {:?} vs {:?}",
            a.protocol, b.protocol
        )));
    }
    let (ci_a, ci_b) = (a.wilson(), b.wilson());
    let success_of = |r: &EvalReport| -> BTreeMap<usize, bool> {
        r.trials.iter().map(|t| (t.trial, t.outcome.is_success())).collect()
    };
    let (sa, sb) = (success_of(a), success_of(b));
    let mut discordant = (0, 0);
    for (i, &x) in &sa {
        match (x, sb.get(i).copied().unwrap_or(false)) {
            (true, false) => discordant.0 += 1,
            (false, true) => discordant.1 += 1,
            _ => {}
        }
    }
    let zip = |ha: &Histogram, hb: &Histogram| {
        ha.bins()
            .zip(hb.bins())
            .map(|((lo, hi, ca), (_, _, cb))| (lo, hi, ca, cb))
            .chain(std::iter::once((ha.max, ha.max, ha.overflow, hb.overflow)))
            .collect()
    };
    Ok(Comparison {
        a: a.method.clone(),
        b: b.method.clone(),
        protocol: a.protocol.clone(),
        rate_a: a.success_rate,
        rate_b: b.success_rate,
        ci_a,
        ci_b,
        difference: a.success_rate - b.success_rate,
        separated: ci_a.0 > ci_b.1 || ci_b.0 > ci_a.1,
        discordant,
        trans_bins: zip(&a.trans_hist, &b.trans_hist),
        rot_bins: zip(&a.rot_hist, &b.rot_hist),
    })
}

impl Comparison {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "setting {} start {} trials {}", self.protocol.setting, self.protocol.start.label(), self.protocol.trials);
        for (name, rate, ci) in [(&self.a, self.rate_a, self.ci_a), (&self.b, self.rate_b, self.ci_b)] {
            let _ = writeln!(s, "  {name:<8} {:>6.1}%  [{:.1}%, {:.1}%]", 100.0 * rate, 100.0 * ci.0, 100.0 * ci.1);
        }
        let _ = writeln!(
            s,
            "  difference {:+.1} pp, {}",
            100.0 * self.difference,
            if self.separated { "intervals separated" } else { "intervals overlap" }
        );
        s
    }
}

/// Writes `success_rates.csv`, `errors_trans.csv` and `errors_rot.csv` for
/// a set of reports.
pub fn write_plot_csvs(reports: &[EvalReport], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rates = String::from("method,setting,start,trials,successes,success_rate,ci_low,ci_high\n");
    let mut trans = String::from("method,setting,start,bin_low,bin_high,count\n");
    let mut rot = trans.clone();
    for r in reports {
        let (lo, hi) = r.wilson();
        let start = r.protocol.start.label();
        let setting = r.protocol.setting;
        let _ = writeln!(
            rates,
            "{},{setting},{start},{},{},{},{lo},{hi}",
            r.method,
            r.n_trials(),
            r.successes,
            r.success_rate
        );
        for (out, h) in [(&mut trans, &r.trans_hist), (&mut rot, &r.rot_hist)] {
            for (lo, hi, c) in h.bins() {
                let _ = writeln!(out, "{},{setting},{start},{lo},{hi},{c}", r.method);
            }
            let _ = writeln!(out, "{},{setting},{start},{},inf,{}", r.method, h.max, h.overflow);
        }
    }
    for (name, text) in [
        ("success_rates.csv", rates),
        ("errors_trans.csv", trans),
        ("errors_rot.csv", rot),
    ] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
