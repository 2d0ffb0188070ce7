use std::path::Path;
use std::process::{Command, Output};

fn servo_rl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_servo-rl"))
        .args(args)
        .env("SERVO_RL_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = servo_rl(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_scenes_single_sample_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-scenes", "--out", p(&a), "--cams", "1", "--objs", "1", "--seed", "3"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["count"], 1);
    assert!(a.join("run.cfg").exists());

    ok(&["gen-scenes", "--out", p(&b), "--cams", "1", "--objs", "1", "--seed", "3"]);
    for f in ["manifest.json", "samples.bin", "poses.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eval_with_zero_trials_writes_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["eval", "--method", "dvs", "--trials", "0", "--out", p(dir.path())]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report_dvs.json")).unwrap()).unwrap();
    assert_eq!(report["trials"].as_array().unwrap().len(), 0);
    assert_eq!(report["successes"], 0);
    let cfg = std::fs::read_to_string(dir.path().join("run.cfg")).unwrap();
    assert!(cfg.contains("eval.trials = 0"));
}

#[test]
fn bad_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = servo_rl(&["eval", "--method", "dvs", "--set", "td3.gama=0.9", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("td3.gama"));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "env.setting = 9\n").unwrap();
    let out = servo_rl(&["--config", p(&cfg), "eval", "--method", "dvs", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = servo_rl(&["compare-dvs", "--policy", "x", "--setting", "3..1", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_with_three_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("nowhere");
    let cases: [&[&str]; 3] = [
        &["train-ae", "--data", p(&nowhere), "--out", p(dir.path())],
        &["train-policy", "--ae", p(&nowhere), "--out", p(dir.path())],
        &["eval", "--policy", p(&nowhere), "--trials", "1", "--out", p(dir.path())],
    ];
    for args in cases {
        let out = servo_rl(args);
        assert_eq!(out.status.code(), Some(3), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("nowhere"), "{err}");
    }
}

#[test]
fn toy_training_resumes_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("toy");
    let common = [
        "--seed", "2", "--set", "td3.hidden=16,16", "--set", "train.warmup_steps=100", "--set",
        "train.exploration_steps=200", "--set", "train.eval_every=10", "--set", "train.eval_episodes=5", "--set",
        "train.checkpoint_every=10",
    ];
    let mut args = vec!["train-policy", "--env", "toy", "--variant", "full", "--out", p(&run)];
    args.extend(common);
    args.extend(["--set", "train.max_episodes=20"]);
    ok(&args);
    let curve = std::fs::read_to_string(run.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 21);
    let evals = std::fs::read_to_string(run.join("eval.csv")).unwrap();
    assert_eq!(evals.lines().count(), 3);

    let mut args = vec!["train-policy", "--env", "toy", "--variant", "full", "--resume", "--out", p(&run)];
    args.extend(common);
    args.extend(["--set", "train.max_episodes=30"]);
    let stdout = ok(&args);
    assert!(stdout.contains("from episode 20"), "{stdout}");
    assert_eq!(std::fs::read_to_string(run.join("curve.csv")).unwrap().lines().count(), 31);
    assert_eq!(std::fs::read_to_string(run.join("eval.csv")).unwrap().lines().count(), 4);

    let plots = dir.path().join("plots");
    ok(&["export-plots", "--runs", p(dir.path()), "--out", p(&plots)]);
    let policy = std::fs::read_to_string(plots.join("policy_curves.csv")).unwrap();
    assert!(policy.starts_with("run,episode,"));
    assert_eq!(policy.lines().count(), 31);
    assert_eq!(std::fs::read_to_string(plots.join("eval_curves.csv")).unwrap().lines().count(), 4);
}

#[test]
fn servo_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    let small = [
        "--seed", "5", "--set", "ae.hidden=32", "--set", "ae.latent=4", "--set", "ae.epochs=2", "--set",
        "td3.hidden=16,16", "--set", "td3.batch_size=16", "--set", "train.warmup_steps=20", "--set",
        "train.exploration_steps=20", "--set", "train.max_episodes=3", "--set", "reward.max_steps=15", "--set",
        "dvs.max_iterations=15",
    ];
    let with = |cmd: &[&str]| -> Vec<String> { cmd.iter().chain(&small).map(|s| s.to_string()).collect() };
    let ok = |args: Vec<String>| ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    ok(with(&["gen-scenes", "--cams", "4", "--objs", "3", "--out", p(&d("data"))]));
    ok(with(&["train-ae", "--data", p(&d("data")), "--out", p(&d("ae"))]));
    assert!(ok(with(&["train-ae", "--resume", "--data", p(&d("data")), "--out", p(&d("ae"))])).contains("nothing to do"));
    ok(with(&["train-policy", "--ae", p(&d("ae")), "--out", p(&d("policy"))]));
    ok(with(&["eval", "--policy", p(&d("policy")), "--ae", p(&d("ae")), "--trials", "2", "--out", p(&d("eval"))]));
    assert!(d("eval").join("report_rl.json").exists());

    // Without the autoencoder the policy's observation width does not match.
    let args = with(&["eval", "--policy", p(&d("policy")), "--trials", "1", "--out", p(&d("bad"))]);
    let out = servo_rl(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(2));

    ok(with(&[
        "compare-dvs", "--policy", p(&d("policy")), "--ae", p(&d("ae")), "--setting", "1..3", "--trials", "1", "--out",
        p(&d("cmp")),
    ]));
    let table = std::fs::read_to_string(d("cmp").join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    for s in 1..=3 {
        for f in [format!("report_rl_s{s}.json"), format!("report_dvs_s{s}.json"), format!("comparison_s{s}.json")] {
            assert!(d("cmp").join(&f).exists(), "{f}");
        }
    }
    let rates = std::fs::read_to_string(d("cmp").join("success_rates.csv")).unwrap();
    assert_eq!(rates.lines().count(), 7);

    ok(with(&["export-plots", "--runs", p(&d("ae")), p(&d("policy")), p(&d("cmp")), "--out", p(&d("plots"))]));
    for f in ["success_rates.csv", "errors_trans.csv", "errors_rot.csv", "policy_curves.csv", "ae_curves.csv"] {
        assert!(d("plots").join(f).exists(), "{f}");
    }
}
