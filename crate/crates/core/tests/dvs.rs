use nalgebra::Vector3;
use servo_rl::dvs::{dvs_step, interaction_matrix, run_dvs_servo, DvsConfig, DvsDemonstrator};
use servo_rl::env::{EnvConfig, ServoEnv, Setting, StartSpec};
use servo_rl::kinematics::{Pose, Twist};
use servo_rl::rl::Demonstrator;
use servo_rl::rng::substream;
use servo_rl::scene::{render_depth, CameraModel, Scene};

fn table_view() -> (Scene, Pose, CameraModel) {
    // Oblique view of bare table, well away from the cup, so depth is smooth.
    let scene = Scene::default();
    let target = Vector3::new(0.9, 0.3, 0.0);
    let pose = Pose::look_at(Vector3::new(0.85, 0.3, 0.3), target, 0.3);
    (scene, pose, CameraModel::default())
}

#[test]
fn interaction_matrix_predicts_depth_image_motion() {
    let (scene, pose, cam) = table_view();
    let img = render_depth(&scene, &pose, &cam);
    assert!(img.data.iter().all(|&d| d < 0.6), "view must be all table");
    let l = interaction_matrix(&img, &cam);
    assert_eq!(l.rows, cam.width * cam.height);
    for v in [
        [0.02, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.03, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.1],
        [0.01, -0.02, 0.015, 0.05, -0.04, 0.1],
    ] {
        let twist = Twist::from_slice(&v);
        let dt = 1e-3;
        let plus = render_depth(&scene, &pose.apply_body_twist(&twist, dt), &cam).normalized(&cam);
        let minus = render_depth(&scene, &pose.apply_body_twist(&twist, -dt), &cam).normalized(&cam);
        let observed: Vec<f64> = plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * dt)).collect();
        let predicted = l.apply(&twist);
        let err = observed.iter().zip(&predicted).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = observed.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / scale < 0.1, "twist {v:?}: relative error {}", err / scale);
    }
}

#[test]
fn identical_images_give_zero_velocity() {
    let (scene, pose, cam) = table_view();
    let img = render_depth(&scene, &pose, &cam);
    let v = dvs_step(&img, &img, &cam, &DvsConfig::default());
    assert_eq!(v.to_array(), [0.0; 6]);
}

#[test]
fn one_step_reduces_image_error() {
    let cfg = EnvConfig::default();
    let mut env = ServoEnv::new(cfg, None, Setting::numbered(1).unwrap()).unwrap();
    let dvs = DvsConfig::default();
    for i in 0..5 {
        env.reset_with(StartSpec::Offset { trans: 0.004, rot: 0.02 }, &mut substream(8, "env", i)).unwrap();
        let before = env.errors().unwrap().img;
        let desired = env.goal().unwrap().image.clone();
        let v = dvs_step(env.image().unwrap(), &desired, &env.config().camera, &dvs);
        let after = env.step_twist(&v).unwrap().errors.img;
        assert!(after < before, "trial {i}: {before} -> {after}");
    }
}

#[test]
fn converges_from_small_offsets_and_replays_identically() {
    let cfg = EnvConfig::default();
    let dvs = DvsConfig::default();
    let mut env = ServoEnv::new(cfg, None, Setting::numbered(1).unwrap()).unwrap();
    let mut csvs = Vec::new();
    for _ in 0..2 {
        env.reset_with(StartSpec::Offset { trans: 0.003, rot: 1f64.to_radians() }, &mut substream(9, "env", 0))
            .unwrap();
        let traj = run_dvs_servo(&mut env, &dvs).unwrap();
        assert!(traj.converged, "{:?}", traj.final_errors());
        assert!(traj.final_errors().0 < 0.002);
        assert!(traj.steps() <= dvs.max_iterations);
        assert_eq!(traj.rows.len(), traj.poses.len());
        csvs.push(traj.to_csv());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn demonstrations_are_successful_episodes() {
    let cfg = EnvConfig::default();
    let mut env = ServoEnv::new(cfg, None, Setting::numbered(1).unwrap()).unwrap();
    let mut demo = DvsDemonstrator::new(DvsConfig::default(), 0.005);
    let mut kept = 0;
    for i in 0..4 {
        if let Some(ep) = demo.demonstrate(&mut env, &mut substream(1, "demo", i)).unwrap() {
            let last = ep.last().unwrap();
            assert!(last.outcome.is_success() && last.done);
            assert!(ep[..ep.len() - 1].iter().all(|t| !t.done));
            for w in ep.windows(2) {
                assert_eq!(w[0].next_obs, w[1].obs);
            }
            kept += 1;
        }
    }
    assert!(kept >= 3, "{kept}/4 demonstrations succeeded");
}
