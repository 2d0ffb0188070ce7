use std::fmt::Write as _;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use servo_rl::autoencoder::{train_autoencoder, AeModel};
use servo_rl::config::RunConfig;
use servo_rl::dvs::DvsDemonstrator;
use servo_rl::env::{ServoEnv, Setting};
use servo_rl::eval::{compare, evaluate, write_plot_csvs, Controller, DvsController, EvalReport, PolicyController, Protocol};
use servo_rl::rl::{evaluate_agent, Demonstrator, GoalEnv, Td3Agent, Trainer, CURVE_HEADER};
use servo_rl::scene::dataset::{generate_autoencoder_dataset, Dataset};
use servo_rl::toy::{PointReachEnv, ReachDemonstrator};
use servo_rl::{Error, Result};

#[derive(Parser)]
#[command(name = "servo-rl", version, about = "Depth-image visual servoing with TD3, HER and DVS baselines")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set td3.batch_size=128`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the autoencoder depth-image dataset.
    GenScenes {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cams: Option<usize>,
        #[arg(long)]
        objs: Option<usize>,
    },
    /// Train the depth autoencoder on a generated dataset.
    TrainAe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep an already trained model in `out` instead of retraining.
        #[arg(long)]
        resume: bool,
    },
    /// Train a policy variant.
    TrainPolicy {
        #[arg(long)]
        out: PathBuf,
        /// Autoencoder directory; required for the servoing env.
        #[arg(long)]
        ae: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "servo")]
        env: EnvKind,
        /// pure-td3, td3-explore, td3-her-explore or full.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        setting: Option<u8>,
        /// Continue from the checkpoint in `out`.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a policy or DVS on seeded trials.
    Eval {
        #[arg(long)]
        out: PathBuf,
        /// Policy run directory (or its `checkpoint/`); required for `--method rl`.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        ae: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "rl")]
        method: Method,
        #[arg(long)]
        setting: Option<u8>,
        #[arg(long)]
        trials: Option<usize>,
        /// setting, cap, home, near-goal or offset.
        #[arg(long)]
        start: Option<String>,
    },
    /// Paired RL vs DVS evaluation over one or more settings.
    CompareDvs {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        ae: Option<PathBuf>,
        /// `2`, `1,3` or a range such as `1..3`.
        #[arg(long, alias = "settings", default_value = "1..3")]
        setting: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        start: Option<String>,
    },
    /// Gather reports and curves from run directories into plot-ready CSVs.
    ExportPlots {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvKind {
    Servo,
    Toy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Rl,
    Dvs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        return report(e);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    if let Error::MissingArtifact(path) = &e {
        if let Some(hint) = artifact_hint(path) {
            eprintln!("hint: {hint}");
        }
    }
    ExitCode::from(e.exit_code() as u8)
}

fn artifact_hint(path: &Path) -> Option<&'static str> {
    match path.file_name()?.to_str()? {
        "manifest.json" => Some("generate a dataset with `servo-rl gen-scenes --out DIR`"),
        "ae.json" => Some("train an autoencoder with `servo-rl train-ae --data DIR --out DIR`"),
        "td3.json" | "progress.json" => Some("train a policy with `servo-rl train-policy --out DIR`"),
        _ => None,
    }
}

/// `SERVO_RL_THREADS` caps the worker pool used by rendering and evaluation.
fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("SERVO_RL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("SERVO_RL_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn set_all(cfg: &mut RunConfig, pairs: &[(&str, Option<String>)]) -> Result<()> {
    for (k, v) in pairs {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    cfg.validate()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::GenScenes { out, cams, objs } => {
            set_all(
                &mut cfg,
                &[
                    ("dataset.cameras", cams.map(|v| v.to_string())),
                    ("dataset.objects", objs.map(|v| v.to_string())),
                ],
            )?;
            cfg.echo_into(&out)?;
            let m = generate_autoencoder_dataset(&cfg.dataset_config(), &out)?;
            println!("wrote {} samples ({}x{}) to {}", m.count, m.width, m.height, out.display());
            Ok(())
        }
        Command::TrainAe { data, out, resume } => {
            cfg.validate()?;
            if resume && out.join("ae.json").exists() {
                AeModel::load(&out)?;
                println!("autoencoder in {} is complete; nothing to do", out.display());
                return Ok(());
            }
            let dataset = Dataset::load(&data)?;
            cfg.echo_into(&out)?;
            let trained = train_autoencoder(&dataset, &cfg.ae_config(), Some(&out))?;
            if let Some(last) = trained.curve.last() {
                println!(
                    "epoch {}: train mse {:.5}, val mse {:.5}",
                    last.epoch, last.train_mse, last.val_mse
                );
            }
            Ok(())
        }
        Command::TrainPolicy {
            out,
            ae,
            env,
            variant,
            setting,
            resume,
        } => {
            set_all(
                &mut cfg,
                &[
                    ("train.variant", variant),
                    ("env.setting", setting.map(|v| v.to_string())),
                ],
            )?;
            cfg.echo_into(&out)?;
            match env {
                EnvKind::Toy => {
                    let mut env = PointReachEnv::new(cfg.toy)?;
                    train_policy(&cfg, &mut env, &mut ReachDemonstrator, &out, resume)
                }
                EnvKind::Servo => {
                    let ae_dir = ae.ok_or_else(|| {
                        Error::Config("the servoing env needs an autoencoder: pass --ae DIR".into())
                    })?;
                    let model = Arc::new(AeModel::load(&ae_dir)?);
                    let mut env = ServoEnv::new(cfg.env_config()?, Some(model), Setting::numbered(cfg.env.setting)?)?;
                    let mut demo = DvsDemonstrator {
                        cfg: cfg.dvs_config()?,
                        radius: cfg.dvs.demo_radius,
                        rotation: cfg.dvs.demo_rotation_deg.to_radians(),
                    };
                    train_policy(&cfg, &mut env, &mut demo, &out, resume)
                }
            }
        }
        Command::Eval {
            out,
            policy,
            ae,
            method,
            setting,
            trials,
            start,
        } => {
            set_all(
                &mut cfg,
                &[
                    ("env.setting", setting.map(|v| v.to_string())),
                    ("eval.trials", trials.map(|v| v.to_string())),
                    ("eval.start", start),
                ],
            )?;
            cfg.echo_into(&out)?;
            let model = load_ae(ae.as_deref())?;
            let controller: Box<dyn Controller> = match method {
                Method::Dvs => Box::new(DvsController {
                    config: cfg.dvs_config()?,
                }),
                Method::Rl => {
                    let dir = policy.ok_or_else(|| Error::Config("--method rl needs --policy DIR".into()))?;
                    Box::new(load_policy(&cfg, &dir, model.clone())?)
                }
            };
            let report = run_eval(&cfg, model, controller.as_ref(), cfg.env.setting)?;
            let path = out.join(format!("report_{}.json", report.method));
            report.save(&path)?;
            write_plot_csvs(std::slice::from_ref(&report), &out)?;
            let (lo, hi) = report.wilson();
            println!(
                "{}: {}/{} successes ({:.1}%, 95% CI [{:.1}%, {:.1}%])",
                report.method,
                report.successes,
                report.n_trials(),
                100.0 * report.success_rate,
                100.0 * lo,
                100.0 * hi
            );
            Ok(())
        }
        Command::CompareDvs {
            out,
            policy,
            ae,
            setting,
            trials,
            start,
        } => {
            set_all(
                &mut cfg,
                &[("eval.trials", trials.map(|v| v.to_string())), ("eval.start", start)],
            )?;
            let settings = parse_settings(&setting)?;
            cfg.echo_into(&out)?;
            let model = load_ae(ae.as_deref())?;
            let rl = load_policy(&cfg, &policy, model.clone())?;
            let dvs = DvsController {
                config: cfg.dvs_config()?,
            };
            let mut reports = Vec::new();
            let mut table = String::from("setting,start,trials,rl_rate,dvs_rate,difference,rl_only,dvs_only,separated\n");
            for s in settings {
                let a = run_eval(&cfg, model.clone(), &rl, s)?;
                let b = run_eval(&cfg, model.clone(), &dvs, s)?;
                let c = compare(&a, &b)?;
                a.save(&out.join(format!("report_rl_s{s}.json")))?;
                b.save(&out.join(format!("report_dvs_s{s}.json")))?;
                let path = out.join(format!("comparison_s{s}.json"));
                fs::write(&path, serde_json::to_string_pretty(&c).expect("comparison serializes"))
                    .map_err(|e| Error::io(&path, e))?;
                print!("{}", c.table());
                let _ = writeln!(
                    table,
                    "{s},{},{},{},{},{},{},{},{}",
                    c.protocol.start.label(),
                    c.protocol.trials,
                    c.rate_a,
                    c.rate_b,
                    c.difference,
                    c.discordant.0,
                    c.discordant.1,
                    c.separated
                );
                reports.extend([a, b]);
            }
            write_text(&out.join("comparison.csv"), &table)?;
            write_plot_csvs(&reports, &out)
        }
        Command::ExportPlots { runs, out } => export_plots(&runs, &out),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_settings(spec: &str) -> Result<Vec<u8>> {
    let bad = || Error::Config(format!("--setting expects N, N,M or A..B, got {spec:?}"));
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once("..") {
            let a: u8 = a.trim().parse().map_err(|_| bad())?;
            let b: u8 = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    for &s in &out {
        Setting::numbered(s)?;
    }
    Ok(out)
}

fn load_ae(dir: Option<&Path>) -> Result<Option<Arc<AeModel>>> {
    dir.map(|d| AeModel::load(d).map(Arc::new)).transpose()
}

/// Accepts either a training run directory or its `checkpoint/`.
fn load_policy(cfg: &RunConfig, dir: &Path, ae: Option<Arc<AeModel>>) -> Result<PolicyController> {
    let ckpt = if dir.join("td3.json").exists() {
        dir.to_path_buf()
    } else {
        dir.join("checkpoint")
    };
    let agent = Td3Agent::load(&ckpt)?;
    let env = ServoEnv::new(cfg.env_config()?, ae, Setting::numbered(1)?)?;
    if agent.obs_dim() != env.observation_dim() {
        return Err(Error::Config(format!(
            "policy expects {} observation values but the env produces {}; pass the autoencoder it was trained with via --ae",
            agent.obs_dim(),
            env.observation_dim()
        )));
    }
    Ok(PolicyController { agent })
}

fn run_eval(cfg: &RunConfig, ae: Option<Arc<AeModel>>, controller: &dyn Controller, setting: u8) -> Result<EvalReport> {
    let protocol = Protocol {
        setting,
        start: cfg.start_mode()?,
        trials: cfg.eval.trials,
        seed: cfg.seed,
    };
    evaluate(&cfg.env_config()?, ae, controller, &protocol)
}

const EVAL_HEADER: &str = "episodes,steps,success_rate";

fn train_policy<E: GoalEnv + Clone>(
    cfg: &RunConfig,
    env: &mut E,
    demo: &mut dyn Demonstrator<E>,
    out: &Path,
    resume: bool,
) -> Result<()> {
    let variant = cfg.variant()?;
    let tc = cfg.train_config();
    let mut trainer = if resume {
        Trainer::resume(env, variant, tc, out)?
    } else {
        Trainer::new(env, variant, tc)?
    };
    let eval_path = out.join("eval.csv");
    let mut eval_log = String::from(EVAL_HEADER);
    eval_log.push('\n');
    if resume {
        if let Ok(text) = fs::read_to_string(&eval_path) {
            let done = trainer.episodes();
            for line in text.lines().skip(1) {
                let episodes: Option<usize> = line.split(',').next().and_then(|v| v.parse().ok());
                if episodes.is_some_and(|e| e <= done) {
                    eval_log.push_str(line);
                    eval_log.push('\n');
                }
            }
        }
    }
    let (every, n_eval, seed) = (cfg.train.eval_every, cfg.train.eval_episodes, cfg.seed);
    let mut eval_env = env.clone();
    println!(
        "training {variant} from episode {} ({} steps)",
        trainer.episodes(),
        trainer.steps()
    );
    trainer.train(env, Some(demo), Some(out), |t, _, row| {
        let done = row.episode + 1;
        if done % 50 == 0 {
            let recent = &t.curve[t.curve.len().saturating_sub(50)..];
            let rate = recent.iter().filter(|r| r.success).count() as f64 / recent.len() as f64;
            println!("episode {done}: {} steps, recent success {:.2}", row.steps, rate);
        }
        if every > 0 && done % every == 0 {
            let rate = evaluate_agent(&mut eval_env, &t.agent, n_eval, seed)?;
            let _ = writeln!(eval_log, "{done},{},{rate}", row.steps);
            write_text(&eval_path, &eval_log)?;
            println!("episode {done}: eval success {rate:.2}");
        }
        Ok(ControlFlow::Continue(()))
    })?;
    if every > 0 {
        write_text(&eval_path, &eval_log)?;
    }
    println!(
        "finished: {} episodes, {} steps, {} demonstrations",
        trainer.episodes(),
        trainer.steps(),
        trainer.demo_episodes()
    );
    Ok(())
}

fn collect_files(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, found)?;
        } else {
            found.push(p);
        }
    }
    Ok(())
}

/// Appends the rows of a CSV whose header matches, prefixed with `run`.
fn append_rows(acc: &mut String, header: &str, run: &str, text: &str) {
    if acc.is_empty() {
        let _ = writeln!(acc, "run,{header}");
    }
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let _ = writeln!(acc, "{run},{line}");
    }
}

fn export_plots(runs: &[PathBuf], out: &Path) -> Result<()> {
    let ae_header = "epoch,train_mse,val_mse,wall_seconds";
    let mut reports = Vec::new();
    let (mut policy, mut ae, mut evals) = (String::new(), String::new(), String::new());
    for root in runs {
        if !root.is_dir() {
            return Err(Error::MissingArtifact(root.clone()));
        }
        let mut files = Vec::new();
        collect_files(root, &mut files)?;
        for f in files {
            let run = f.parent().unwrap_or(root).display().to_string();
            let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if name.starts_with("report_") && name.ends_with(".json") {
                reports.push(EvalReport::load(&f)?);
                continue;
            }
            if !name.ends_with(".csv") {
                continue;
            }
            let text = fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
            match text.lines().next().unwrap_or_default() {
                h if h == CURVE_HEADER => append_rows(&mut policy, h, &run, &text),
                h if h == ae_header => append_rows(&mut ae, h, &run, &text),
                h if h == EVAL_HEADER => append_rows(&mut evals, h, &run, &text),
                _ => {}
            }
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_plot_csvs(&reports, out)?;
    for (name, text) in [("policy_curves.csv", policy), ("ae_curves.csv", ae), ("eval_curves.csv", evals)] {
        if !text.is_empty() {
            write_text(&out.join(name), &text)?;
        }
    }
    println!("exported {} reports to {}", reports.len(), out.display());
    Ok(())
}
