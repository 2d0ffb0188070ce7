use std::sync::Arc;

use servo_rl::autoencoder::{mse, train_autoencoder, AeConfig, AeModel};
use servo_rl::env::{EnvConfig, ServoEnv, Setting};
use servo_rl::nn::Tensor2;
use servo_rl::rng::substream;
use servo_rl::scene::dataset::{generate_autoencoder_dataset, Dataset, DatasetConfig};
use servo_rl::scene::{render_depth, sample_camera_pose_on_cap, CameraModel, CapSampler, Scene};

fn dataset(cameras: usize, objects: usize) -> (tempfile::TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        cameras,
        objects,
        seed: 11,
        ..DatasetConfig::default()
    };
    generate_autoencoder_dataset(&cfg, dir.path()).unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    (dir, ds)
}

fn small_config(epochs: usize) -> AeConfig {
    AeConfig {
        hidden: vec![64],
        latent: 8,
        epochs,
        // Only a handful of optimizer steps here; a long average would lag.
        ema_decay: 0.5,
        ..AeConfig::default()
    }
}

fn some_image(seed: u64) -> servo_rl::scene::DepthImage {
    let scene = Scene::default();
    let pose = sample_camera_pose_on_cap(&mut substream(seed, "img", 0), &CapSampler::default(), &scene.cup_center());
    render_depth(&scene, &pose, &CameraModel::default())
}

#[test]
fn training_lowers_held_out_error_and_is_deterministic() {
    let (_d, ds) = dataset(20, 5);
    let cfg = small_config(15);
    let untrained = AeModel::for_camera(&cfg, &CameraModel::default(), &mut substream(cfg.seed, "ae-init", 0)).unwrap();
    let out = train_autoencoder(&ds, &cfg, None).unwrap();
    let val = ds.normalized_rows(&out.val_indices);
    let before = untrained.batch_mse(&val).unwrap();
    let after = out.model.batch_mse(&val).unwrap();
    assert!(after < 0.5 * before, "{before} -> {after}");
    assert_eq!(out.curve.last().unwrap().val_mse, after);
    assert_eq!(out.val_indices.len(), 10);

    let again = train_autoencoder(&ds, &cfg, None).unwrap();
    assert_eq!(again.model.encoder.params(), out.model.encoder.params());
    assert_eq!(again.model.decoder.params(), out.model.decoder.params());
    let strip = |c: &[servo_rl::autoencoder::CurveRow]| c.iter().map(|r| (r.epoch, r.train_mse, r.val_mse)).collect::<Vec<_>>();
    assert_eq!(strip(&again.curve), strip(&out.curve));
}

#[test]
fn reconstruct_is_decoder_after_encoder() {
    let cfg = small_config(1);
    let cam = CameraModel::default();
    let model = AeModel::for_camera(&cfg, &cam, &mut substream(1, "ae-init", 0)).unwrap();
    let img = some_image(1);
    let x = Tensor2::row_vector(&img.normalized(&cam));
    let manual = model.decoder.predict(&model.encoder.predict(&x).unwrap()).unwrap();
    let (rec, err) = model.reconstruct(&img).unwrap();
    assert_eq!(err, mse(&x, &manual));
    for (r, m) in rec.data.iter().zip(manual.data()) {
        assert!((cam.normalize_depth(*r) - m).abs() < 1e-12);
    }
}

#[test]
fn encoding_is_deterministic_and_locally_stable() {
    let cfg = small_config(1);
    let model = AeModel::for_camera(&cfg, &CameraModel::default(), &mut substream(2, "ae-init", 0)).unwrap();
    let img = some_image(2);
    let a = model.encode(&img).unwrap();
    assert_eq!(a, model.encode(&img).unwrap());
    assert_eq!(a.len(), 8);
    let mut nudged = img.clone();
    nudged.data[100] += 5e-7;
    let b = model.encode(&nudged).unwrap();
    let dist = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(dist.is_finite() && dist < 1e-4, "{dist}");

    let wrong = servo_rl::scene::DepthImage::filled(16, 16, 0.5);
    assert!(model.encode(&wrong).is_err());
}

#[test]
fn save_load_round_trip_and_missing_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(1);
    let model = AeModel::for_camera(&cfg, &CameraModel::default(), &mut substream(3, "ae-init", 0)).unwrap();
    model.save(dir.path()).unwrap();
    let loaded = AeModel::load(dir.path()).unwrap();
    let img = some_image(3);
    assert_eq!(loaded.encode(&img).unwrap(), model.encode(&img).unwrap());
    let missing = AeModel::load(&dir.path().join("nope")).unwrap_err();
    assert_eq!(missing.exit_code(), 3);
}

#[test]
fn training_writes_model_and_curve() {
    let (_d, ds) = dataset(10, 2);
    let out_dir = tempfile::tempdir().unwrap();
    train_autoencoder(&ds, &small_config(3), Some(out_dir.path())).unwrap();
    AeModel::load(out_dir.path()).unwrap();
    let csv = std::fs::read_to_string(out_dir.path().join("curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,train_mse,val_mse,wall_seconds"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn environment_goal_code_is_the_encoder_output() {
    let cfg = small_config(1);
    let env_cfg = EnvConfig::default();
    let model = Arc::new(AeModel::for_camera(&cfg, &env_cfg.camera, &mut substream(4, "ae-init", 0)).unwrap());
    let mut env = ServoEnv::new(env_cfg, Some(model.clone()), Setting::numbered(1).unwrap()).unwrap();
    let obs = env.reset(&mut substream(4, "env", 0)).unwrap();
    let goal = env.goal().unwrap();
    assert_eq!(obs.s_des, model.encode(&goal.image).unwrap().0);
    assert_eq!(obs.s_t, model.encode(env.image().unwrap()).unwrap().0);
}
