//! Acceptance suite. Prints one `criterion N: PASS|FAIL|SKIP` line each and
//! exits nonzero when any criterion fails.
//!
//! Criterion 9 is the overnight end-to-end run; it only executes with
//! `--ignored`/`--include-ignored` or `SERVO_RL_OVERNIGHT=1`. Criterion 10 reruns
//! 4, 5 and 7 (and 9 when enabled) and diffs every CSV they wrote.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::Matrix4;
use rand::Rng as _;
use serde_json::Value;
use servo_rl::env::{EnvConfig, FailureReason, Outcome, ServoEnv, Setting, StartSpec, ActionBounds, HOME};
use servo_rl::kinematics::{
    forward_kinematics, geometric_jacobian, pose_errors, rotation_log, twist_transform, DhChain, JacobianFrame,
    JointVector, Pose,
};
use servo_rl::nn::{Activation, MlpNet, Tensor2};
use servo_rl::rl::{her_relabel, GoalEnv, Transition};
use servo_rl::rng::substream;
use servo_rl::scene::Scene;
use servo_rl::toy::{PointReachConfig, PointReachEnv};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_servo-rl"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "servo-rl {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn config_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok((header, rows))
}

fn column(header: &[String], name: &str) -> Result<usize, String> {
    header.iter().position(|h| h == name).ok_or_else(|| format!("no column {name}"))
}

// --- 1 -------------------------------------------------------------------

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn set_flat(net: &mut MlpNet, v: &[f64]) {
    v.iter().zip(net.params_mut().slices_mut().flatten()).for_each(|(s, d)| *d = *s);
}

fn gradient_check(seed: u64) -> f64 {
    let mut rng = substream(seed, "acceptance-grad", 0);
    let mut sizes = vec![rng.random_range(1..=8)];
    for _ in 0..rng.random_range(1..=3) {
        sizes.push(rng.random_range(1..=12));
    }
    let act = [Activation::Tanh, Activation::Identity];
    let mut net = MlpNet::new(&sizes, act[rng.random_range(0..2)], act[rng.random_range(0..2)], &mut rng).unwrap();
    assert!(net.num_params() <= 1000);
    for l in &mut net.params_mut().layers {
        l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let batch = rng.random_range(1..=4);
    let rand_t = |r: usize, c: usize, rng: &mut servo_rl::rng::Rng| {
        Tensor2::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let x = rand_t(batch, sizes[0], &mut rng);
    let c = rand_t(batch, *sizes.last().unwrap(), &mut rng);
    let loss = |net: &MlpNet| -> f64 { net.predict(&x).unwrap().data().iter().zip(c.data()).map(|(a, b)| a * b).sum() };
    net.forward(&x).unwrap();
    let analytic = net.backward(&c).unwrap().params.to_flat();
    let base = net.params().to_flat();
    let h = 1e-6;
    let numeric: Vec<f64> = (0..base.len())
        .map(|k| {
            let mut v = base.clone();
            v[k] = base[k] + h;
            set_flat(&mut net, &v);
            let up = loss(&net);
            v[k] = base[k] - h;
            set_flat(&mut net, &v);
            let down = loss(&net);
            (up - down) / (2.0 * h)
        })
        .collect();
    relative_error(&analytic, &numeric)
}

fn criterion_1() -> Check {
    let worst = (0..50).map(gradient_check).fold(0.0, f64::max);
    ensure(worst < 1e-4, format!("worst relative error {worst:.2e}"))?;
    Ok(format!("50 nets, worst relative error {worst:.2e} < 1e-4"))
}

// --- 2 -------------------------------------------------------------------

fn dh(a: f64, d: f64, alpha: f64, theta: f64) -> Matrix4<f64> {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    Matrix4::new(ct, -st * ca, st * sa, a * ct, st, ct * ca, -ct * sa, a * st, 0.0, sa, ca, d, 0.0, 0.0, 0.0, 1.0)
}

fn criterion_2() -> Check {
    let chain = DhChain::ur5e();
    let mut rng = substream(2, "acceptance-kin", 0);
    let (mut fk_err, mut jac_err, mut adj_err) = (0.0f64, 0.0f64, 0.0f64);
    let h = 1e-6;
    for _ in 0..100 {
        let q: JointVector = std::array::from_fn(|_| rng.random_range(-3.1..3.1));
        let mut t = Matrix4::identity();
        for (j, qi) in chain.joints.iter().zip(&q) {
            t *= dh(j.a, j.d, j.alpha, qi + j.theta_offset);
        }
        let fk = forward_kinematics(&chain, &q);
        fk_err = fk_err.max((fk.end_effector().to_homogeneous() - t).abs().max());

        let jac = geometric_jacobian(&chain, &q, JacobianFrame::Base);
        for i in 0..6 {
            let (mut qp, mut qm) = (q, q);
            qp[i] += h;
            qm[i] -= h;
            let (a, b) = (forward_kinematics(&chain, &qp), forward_kinematics(&chain, &qm));
            let lin = (a.end_effector().translation - b.end_effector().translation) / (2.0 * h);
            let ang = rotation_log(&(a.end_effector().rotation * b.end_effector().rotation.transpose())) / (2.0 * h);
            for k in 0..3 {
                jac_err = jac_err.max((jac[(k, i)] - lin[k]).abs()).max((jac[(k + 3, i)] - ang[k]).abs());
            }
        }

        let pose = |rng: &mut servo_rl::rng::Rng| {
            let axis = nalgebra::Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let r = Pose::from_axis_angle(axis, rng.random_range(-3.0..3.0));
            Pose::new(r.rotation, nalgebra::Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
        };
        let (a, b) = (pose(&mut rng), pose(&mut rng));
        adj_err = adj_err.max((twist_transform(&a.compose(&b)) - twist_transform(&a) * twist_transform(&b)).abs().max());
    }
    ensure(fk_err < 1e-9, format!("FK error {fk_err:e}"))?;
    ensure(jac_err < 1e-5, format!("Jacobian error {jac_err:e}"))?;
    ensure(adj_err < 1e-9, format!("twist transform residual {adj_err:e}"))?;
    Ok(format!("100 configurations: FK {fk_err:.1e}, Jacobian {jac_err:.1e}, twist transform {adj_err:.1e}"))
}

// --- 3 -------------------------------------------------------------------

/// Shaped reward written out from the weights, independent of the library's
/// reward function.
fn expected_reward(w: &servo_rl::env::RewardWeights, prev: (f64, f64, f64), next: (f64, f64, f64), a: &[f64], o: Outcome) -> f64 {
    let shaping = w.phi1 * (prev.0 - next.0) + w.phi2 * (prev.1 - next.1) + w.phi3 * (prev.2 - next.2) - w.phi4 * w.e_step;
    let terminal = match o {
        Outcome::Running => 0.0,
        Outcome::Success => w.success_reward - a.iter().map(|v| v * v).sum::<f64>().sqrt(),
        Outcome::Failure(_) => w.failure_reward,
    };
    shaping + terminal
}

fn env_from(cfg: EnvConfig, start_offset: (usize, f64)) -> ServoEnv {
    let mut env = ServoEnv::new(cfg, None, Setting::numbered(1).unwrap()).unwrap();
    let mut start = HOME;
    start[start_offset.0] += start_offset.1;
    env.begin(Scene::default(), HOME, start).unwrap();
    env
}

fn checked_step(env: &mut ServoEnv, action: &[f64]) -> Result<(Outcome, f64), String> {
    let e = env.errors().unwrap();
    let s = env.step(action).map_err(|e| e.to_string())?;
    let w = env.config().reward;
    let want = expected_reward(&w, (e.trans, e.rot, e.img), (s.errors.trans, s.errors.rot, s.errors.img), &s.action, s.outcome);
    ensure(s.reward == want, format!("{}: reward {} != {}", s.outcome, s.reward, want))?;
    ensure(s.done == s.outcome.is_terminal(), "done flag disagrees with outcome")?;
    Ok((s.outcome, s.reward))
}

fn criterion_3() -> Check {
    let base = EnvConfig::default();
    let w = base.reward;
    let zero = [0.0; 6];

    let (o, r) = checked_step(&mut env_from(base.clone(), (5, 0.1)), &zero)?;
    ensure(o == Outcome::Running && r == -w.phi4 * w.e_step && r == -0.1, format!("zero-delta step gave {r}"))?;

    let mut seen = BTreeMap::new();
    let mut record = |o: Outcome, r: f64| -> Result<(), String> {
        let Outcome::Failure(reason) = o else {
            return Err(format!("expected a failure, got {o}"));
        };
        // checked_step already matched the exact reward; this pins the terminal.
        ensure(w.failure_reward == -100.0, "failure reward is not -100")?;
        seen.insert(reason.as_str(), r);
        Ok(())
    };
    let mut cfg = base.clone();
    cfg.reward.max_steps = 1;
    let (o, r) = checked_step(&mut env_from(cfg, (5, 0.1)), &zero)?;
    record(o, r)?;
    let mut cfg = base.clone();
    cfg.reward.d_rot = 0.06;
    let (o, r) = checked_step(&mut env_from(cfg, (5, 0.1)), &zero)?;
    record(o, r)?;
    let mut cfg = base.clone();
    cfg.reward.d_trans = 0.005;
    let (o, r) = checked_step(&mut env_from(cfg, (0, 0.05)), &zero)?;
    record(o, r)?;
    let mut cfg = base.clone();
    cfg.reward.phi_jacobian = 1e6;
    let (o, r) = checked_step(&mut env_from(cfg, (5, 0.1)), &zero)?;
    record(o, r)?;
    let mut cfg = base.clone();
    cfg.spheres.camera_radius = 1.0;
    let (o, r) = checked_step(&mut env_from(cfg, (5, 0.1)), &zero)?;
    record(o, r)?;
    let mut cfg = base.clone();
    let mut start = HOME;
    start[5] += 0.1;
    cfg.chain.joint_limits = std::array::from_fn(|i| (start[i] - 1e-6, start[i] + 1e-6));
    let (o, r) = checked_step(&mut env_from(cfg, (5, 0.1)), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0])?;
    record(o, r)?;
    let mut cfg = base.clone();
    cfg.bounds = ActionBounds::symmetric(0.1, 20.0);
    cfg.chain.velocity_limits = [1e3; 6];
    let (o, r) = checked_step(&mut env_from(cfg, (5, 0.1)), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0])?;
    record(o, r)?;
    ensure(seen.len() == FailureReason::ALL.len(), format!("reached only {:?}", seen.keys()))?;

    // Success: one full-speed turn about the optical axis lands on the goal.
    let mut cfg = base.clone();
    cfg.bounds = ActionBounds::symmetric(0.1, 0.6);
    let mut success = None;
    for sign in [1.0, -1.0] {
        let (o, r) = checked_step(&mut env_from(cfg.clone(), (5, 0.06)), &[0.0, 0.0, 0.0, 0.0, 0.0, sign])?;
        if o == Outcome::Success {
            success = Some(r);
        }
    }
    let r = success.ok_or("no success step")?;
    Ok(format!(
        "zero-delta r = -0.1, all {} failure reasons pay -100, success step r = {r:.4} (100 - |a| bonus)",
        seen.len()
    ))
}

// --- 4 / 5 ---------------------------------------------------------------

fn dvs_eval(out: &Path, setting: u8, start: &str) -> Result<Value, String> {
    cli(&[
        "eval", "--method", "dvs", "--seed", "4", "--setting", &setting.to_string(), "--start", start, "--trials", "50",
        "--out", p(out),
    ])?;
    read_json(&out.join("report_dvs.json"))
}

fn run_4(dir: &Path) -> Check {
    let r = dvs_eval(&dir.join("c4"), 1, "near-goal")?;
    let n = r["trials"].as_array().unwrap().len();
    let steps_ok = r["trials"].as_array().unwrap().iter().all(|t| t["steps"].as_u64().unwrap() <= 200);
    let good = r["trials"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|t| t["outcome"]["kind"] == "success" && t["e_trans"].as_f64().unwrap() < 0.002)
        .count();
    ensure(n == 50 && steps_ok, "expected 50 trials of at most 200 steps")?;
    ensure(good * 10 >= 9 * n, format!("{good}/{n} converged"))?;
    Ok(format!("{good}/{n} near-goal trials reach e_trans < 2 mm within 200 steps"))
}

fn run_5(dir: &Path) -> Check {
    let near = dvs_eval(&dir.join("c5-near"), 3, "near-goal")?;
    let hemi = dvs_eval(&dir.join("c5-hemisphere"), 3, "setting")?;
    let (a, b) = (near["success_rate"].as_f64().unwrap(), hemi["success_rate"].as_f64().unwrap());
    ensure(a - b >= 0.30, format!("near-goal {a:.2} vs hemisphere {b:.2}"))?;
    Ok(format!(
        "setting 3, 50 paired trials: near-goal {:.0}% vs hemisphere starts {:.0}% ({:+.0} pp)",
        100.0 * a,
        100.0 * b,
        100.0 * (b - a)
    ))
}

// --- 6 -------------------------------------------------------------------

fn criterion_6() -> Check {
    let mut checked = 0;
    let mut finals = 0;

    // Point-reach: wander, then head for the goal.
    let cfg = PointReachConfig::default();
    let mut toy = PointReachEnv::new(cfg).unwrap();
    for seed in 0..20 {
        toy.reset_episode(&mut substream(seed, "env", 0)).unwrap();
        let mut episode: Vec<Transition<Vec<f64>>> = Vec::new();
        for k in 0.. {
            let a = [((k as f64) * 0.7 + seed as f64).sin(), ((k as f64) * 0.3).cos()];
            let s = toy.step_transition(&a).unwrap();
            episode.push(s.transition);
            if s.episode_over {
                break;
            }
        }
        for c in her_relabel(&toy, &episode, 4, &mut substream(seed, "her", 0)) {
            let d = |x: &[f64], g: &[f64]| x.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let (prev, next) = (d(&c.achieved_prev, &c.desired), d(&c.achieved, &c.desired));
            let outcome = if c.achieved.iter().any(|v| v.abs() > cfg.arena) {
                Outcome::Failure(FailureReason::DivergedTrans)
            } else if next < cfg.success_radius {
                Outcome::Success
            } else if c.step >= cfg.max_steps {
                Outcome::Failure(FailureReason::MaxSteps)
            } else {
                Outcome::Running
            };
            let terminal = match outcome {
                Outcome::Running => 0.0,
                Outcome::Success => cfg.success_reward - c.action.iter().map(|v| v * v).sum::<f64>().sqrt(),
                Outcome::Failure(FailureReason::MaxSteps) if !cfg.max_steps_is_failure => 0.0,
                Outcome::Failure(_) => cfg.failure_reward,
            };
            let want = cfg.phi1 * (prev - next) - cfg.phi4 * cfg.e_step + terminal;
            ensure(c.outcome == outcome && c.reward == want, format!("toy relabel {} vs {want}", c.reward))?;
            checked += 1;
        }
        if let Some(last) = episode.iter().take_while(|t| toy.achieved_is_goal(t)).last() {
            let r = toy.relabel(last, &Arc::clone(&last.achieved));
            ensure(r.outcome.is_success() && r.done, "toy final relabel is not a terminal success")?;
            finals += 1;
        }
    }

    // Servoing env from random setting-3 starts under a fixed twist.
    let env_cfg = EnvConfig::default();
    let w = env_cfg.reward;
    let mut env = ServoEnv::new(env_cfg, None, Setting::numbered(3).unwrap()).unwrap();
    for seed in 0..4 {
        let mut rng = substream(seed, "env", 0);
        env.reset_with(StartSpec::NearGoal { trans: 0.05, rot: 0.2 }, &mut rng).unwrap();
        let mut episode = Vec::new();
        for k in 0..25 {
            let a: Vec<f64> = (0..6).map(|i| (0.5 * (k + i) as f64 + seed as f64).sin() * 0.5).collect();
            let s = env.step_transition(&a).unwrap();
            episode.push(s.transition);
            if s.episode_over {
                break;
            }
        }
        for c in her_relabel(&env, &episode, 4, &mut substream(seed, "her", 0)) {
            let err = |s: &servo_rl::env::GoalState| {
                let (t, r) = pose_errors(&s.camera, &c.desired.camera);
                let img = s.pixels.iter().zip(&c.desired.pixels).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                    / s.pixels.len() as f64;
                (t, r, img)
            };
            let (prev, next) = (err(&c.achieved_prev), err(&c.achieved));
            let outcome = if next.0 < w.phi_trans && next.1 < w.phi_rot {
                Outcome::Success
            } else if next.0 > w.d_trans {
                Outcome::Failure(FailureReason::DivergedTrans)
            } else if next.1 > w.d_rot {
                Outcome::Failure(FailureReason::DivergedRot)
            } else if c.step >= w.max_steps {
                Outcome::Failure(FailureReason::MaxSteps)
            } else {
                Outcome::Running
            };
            let want = expected_reward(&w, prev, next, &c.action, outcome);
            ensure(c.outcome == outcome && c.reward == want, format!("servo relabel {} vs {want}", c.reward))?;
            checked += 1;
        }
        if let Some(last) = episode.iter().take_while(|t| env.achieved_is_goal(t)).last() {
            let r = env.relabel(last, &Arc::clone(&last.achieved));
            ensure(r.outcome.is_success() && r.done, "servo final relabel is not a terminal success")?;
            finals += 1;
        }
    }
    Ok(format!("{checked} relabeled rewards recomputed bit-exactly; {finals}/{finals} final relabels are terminal successes"))
}

// --- 7 -------------------------------------------------------------------

const VARIANTS: [&str; 3] = ["pure-td3", "td3-her-explore", "full"];

fn run_7(dir: &Path) -> Check {
    let cfg = config_file("toy_ablation.cfg");
    let mut peaks = BTreeMap::new();
    let mut returns = BTreeMap::new();
    for v in VARIANTS {
        let out = dir.join(format!("c7-{v}"));
        cli(&["--config", p(&cfg), "train-policy", "--env", "toy", "--variant", v, "--out", p(&out)])?;
        let (h, rows) = read_csv(&out.join("eval.csv"))?;
        let (si, ri) = (column(&h, "steps")?, column(&h, "success_rate")?);
        let within: Vec<f64> = rows
            .iter()
            .filter(|r| r[si].parse::<u64>().unwrap() <= 50_000)
            .map(|r| r[ri].parse().unwrap())
            .collect();
        ensure(!within.is_empty(), format!("{v}: no evaluations"))?;
        peaks.insert(v, within.iter().copied().fold(0.0, f64::max));

        let (h, rows) = read_csv(&out.join("curve.csv"))?;
        let ret = column(&h, "return")?;
        let tail: Vec<f64> = rows.iter().rev().take(100).map(|r| r[ret].parse().unwrap()).collect();
        returns.insert(v, tail.iter().sum::<f64>() / tail.len() as f64);
    }
    let summary = format!(
        "best eval within 50k steps: pure-td3 {:.2}, td3-her-explore {:.2}, full {:.2}; final mean return full {:.1} vs pure {:.1}",
        peaks["pure-td3"], peaks["td3-her-explore"], peaks["full"], returns["full"], returns["pure-td3"]
    );
    ensure(peaks["td3-her-explore"] >= 0.9 && peaks["full"] >= 0.9 && peaks["pure-td3"] < 0.3, summary.clone())?;
    ensure(returns["full"] >= returns["pure-td3"], summary.clone())?;
    Ok(summary)
}

// --- 8 -------------------------------------------------------------------

fn criterion_8(dir: &Path) -> Check {
    let (data, ae) = (dir.join("c8-data"), dir.join("c8-ae"));
    cli(&["gen-scenes", "--seed", "8", "--cams", "100", "--objs", "10", "--out", p(&data)])?;
    let count = read_json(&data.join("manifest.json"))?["count"].as_u64().unwrap_or(0);
    ensure(count == 1000, format!("dataset has {count} samples"))?;
    cli(&["train-ae", "--seed", "8", "--set", "ae.epochs=200", "--data", p(&data), "--out", p(&ae)])?;
    let (h, rows) = read_csv(&ae.join("curve.csv"))?;
    let vi = column(&h, "val_mse")?;
    let val: Vec<f64> = rows.iter().map(|r| r[vi].parse().unwrap()).collect();
    let last = *val.last().ok_or("empty curve")?;
    // Trailing 10-epoch mean over the last half of training.
    let smooth: Vec<f64> = (9..val.len()).map(|i| val[i - 9..=i].iter().sum::<f64>() / 10.0).collect();
    let half = &smooth[smooth.len() / 2..];
    let monotone = half.windows(2).all(|w| w[1] <= w[0]);
    ensure(val.len() <= 200 && last < 0.01, format!("val mse {last:.5} after {} epochs", val.len()))?;
    ensure(monotone, "smoothed validation curve rises in the second half")?;
    Ok(format!("1000 samples, val mse {last:.5} after {} epochs, smoothed curve non-increasing", val.len()))
}

// --- 9 -------------------------------------------------------------------

fn run_9(dir: &Path) -> Check {
    let cfg = config_file("smoke.cfg");
    let c = p(&cfg);
    let d = |n: &str| dir.join(format!("c9-{n}"));
    cli(&["--config", c, "gen-scenes", "--out", p(&d("data"))])?;
    cli(&["--config", c, "train-ae", "--data", p(&d("data")), "--out", p(&d("ae"))])?;
    cli(&["--config", c, "train-policy", "--variant", "full", "--ae", p(&d("ae")), "--out", p(&d("policy"))])?;
    cli(&["--config", c, "compare-dvs", "--setting", "1", "--policy", p(&d("policy")), "--ae", p(&d("ae")), "--out", p(&d("eval"))])?;
    let cmp = read_json(&d("eval").join("comparison_s1.json"))?;
    let (rl, dvs) = (cmp["rate_a"].as_f64().unwrap(), cmp["rate_b"].as_f64().unwrap());
    let trials = cmp["protocol"]["trials"].as_u64().unwrap();
    ensure(trials == 50, "expected 50 trials")?;
    ensure(rl > dvs, format!("RL {rl:.2} vs DVS {dvs:.2}"))?;
    Ok(format!("RL {:.0}% vs DVS {:.0}% over 50 paired cap starts", 100.0 * rl, 100.0 * dvs))
}

// --- 10 ------------------------------------------------------------------

/// CSV files under `dir` with any `wall_seconds` column removed.
fn csv_outputs(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|x| x == "csv") {
                let text = fs::read_to_string(&path).unwrap();
                let header: Vec<&str> = text.lines().next().unwrap_or_default().split(',').collect();
                let skip = header.iter().position(|h| *h == "wall_seconds");
                let stripped: String = text
                    .lines()
                    .map(|l| {
                        let cells: Vec<&str> =
                            l.split(',').enumerate().filter(|(i, _)| Some(*i) != skip).map(|(_, c)| c).collect();
                        cells.join(",") + "\n"
                    })
                    .collect();
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), stripped);
            }
        }
    }
    out
}

fn criterion_10(first: &Path, second: &Path, overnight: bool) -> Check {
    let mut runs: Vec<(&str, fn(&Path) -> Check)> = vec![("4", run_4), ("5", run_5), ("7", run_7)];
    if overnight {
        runs.push(("9", run_9));
    }
    for (_, f) in &runs {
        f(second)?;
    }
    let (a, b) = (csv_outputs(first), csv_outputs(second));
    ensure(!a.is_empty(), "no CSV outputs to compare")?;
    ensure(a.keys().eq(b.keys()), "the two runs wrote different CSV files")?;
    for (k, v) in &a {
        ensure(&b[k] == v, format!("{} differs between runs", k.display()))?;
    }
    let names: Vec<&str> = runs.iter().map(|r| r.0).collect();
    Ok(format!("{} CSV files from criteria {} identical across two runs (wall_seconds excluded)", a.len(), names.join(", ")))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let overnight = args.iter().any(|a| a == "--ignored" || a == "--include-ignored")
        || std::env::var("SERVO_RL_OVERNIGHT").is_ok_and(|v| v == "1");

    let work = tempfile::tempdir().expect("temp dir");
    let (first, second) = (work.path().join("run1"), work.path().join("run2"));
    fs::create_dir_all(&first).unwrap();
    fs::create_dir_all(&second).unwrap();

    let criteria: Vec<(u8, Box<dyn Fn() -> Option<Check>>)> = vec![
        (1, Box::new(|| Some(criterion_1()))),
        (2, Box::new(|| Some(criterion_2()))),
        (3, Box::new(|| Some(criterion_3()))),
        (4, Box::new(|| Some(run_4(&first)))),
        (5, Box::new(|| Some(run_5(&first)))),
        (6, Box::new(|| Some(criterion_6()))),
        (7, Box::new(|| Some(run_7(&first)))),
        (8, Box::new(|| Some(criterion_8(&work.path().join("ae"))))),
        (9, Box::new(|| overnight.then(|| run_9(&first)))),
        (10, Box::new(|| Some(criterion_10(&first, &second, overnight)))),
    ];

    // SERVO_RL_CRITERIA=1,2,6 runs a subset.
    let only: Option<Vec<u8>> = std::env::var("SERVO_RL_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());

    let mut failed = 0;
    for (n, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| f())).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Some(Err(format!("panicked: {msg}")))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            None => println!("criterion {n}: SKIP overnight run; pass --ignored or set SERVO_RL_OVERNIGHT=1"),
            Some(Ok(msg)) => println!("criterion {n}: PASS {msg} [{secs:.0}s]"),
            Some(Err(msg)) => {
                failed += 1;
                println!("criterion {n}: FAIL {msg} [{secs:.0}s]");
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
