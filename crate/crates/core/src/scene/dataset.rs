//! Autoencoder training data: depth images rendered from random camera poses
//! on the spherical cap, each combined with random object placements.
//!
//! On disk a dataset is a directory holding
//! - `manifest.json`: counts, image size, normalization constants, seeds;
//! - `samples.bin`: little-endian `f32` depth in meters, image after image;
//! - `poses.csv`: per sample the camera position and quaternion plus the cup
//!   placement.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{perturb_object, render_depth, sample_camera_pose_on_cap, CameraModel, CapSampler, Scene};
use crate::error::{Error, Result};
use crate::kinematics::Pose;
use crate::nn::Tensor2;
use crate::rng::substream;

const FORMAT: &str = "servo-rl-depth-dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub cameras: usize,
    pub objects: usize,
    pub seed: u64,
    pub cap: CapSampler,
    pub object_range: f64,
    pub camera: CameraModel,
    pub scene: Scene,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            cameras: 100,
            objects: 100,
            seed: 0,
            cap: CapSampler::default(),
            object_range: 0.05,
            camera: CameraModel::default(),
            scene: Scene::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub count: usize,
    pub cameras: usize,
    pub objects: usize,
    pub width: usize,
    pub height: usize,
    /// Normalization: `(depth - near) / (far - near)`.
    pub near: f64,
    pub far: f64,
    pub seed: u64,
    pub camera_stream: String,
    pub object_stream: String,
    pub config: DatasetConfig,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub camera_pose: Pose,
    pub scene: Scene,
    pub depth: Vec<f32>,
}

/// Renders sample `index` (camera `index / objects`, object `index % objects`).
pub fn render_sample(cfg: &DatasetConfig, index: usize) -> Sample {
    let cam_index = (index / cfg.objects) as u64;
    let mut cam_rng = substream(cfg.seed, "dataset-camera", cam_index);
    let target = cfg.scene.cup_center();
    let camera_pose = sample_camera_pose_on_cap(&mut cam_rng, &cfg.cap, &target);
    let mut obj_rng = substream(cfg.seed, "dataset-object", index as u64);
    let scene = perturb_object(&cfg.scene, &mut obj_rng, cfg.object_range);
    let img = render_depth(&scene, &camera_pose, &cfg.camera);
    Sample {
        camera_pose,
        scene,
        depth: img.data.iter().map(|&d| d as f32).collect(),
    }
}

pub fn generate_autoencoder_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let count = cfg.cameras * cfg.objects;
    if count == 0 {
        return Err(Error::Config("dataset needs at least one camera and one object pose".into()));
    }
    cfg.camera.validate()?;
    cfg.scene.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let samples: Vec<Sample> = (0..count)
        .into_par_iter()
        .map(|i| render_sample(cfg, i))
        .collect();

    let mut bin = Vec::with_capacity(count * cfg.camera.pixel_count() * 4);
    let mut csv = String::from("index,cam_x,cam_y,cam_z,qw,qx,qy,qz,cup_x,cup_y,cup_yaw\n");
    for (i, s) in samples.iter().enumerate() {
        for v in &s.depth {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        let t = s.camera_pose.translation;
        let q = s.camera_pose.quaternion_wxyz();
        csv.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{},{},{}\n",
            t.x, t.y, t.z, q[0], q[1], q[2], q[3], s.scene.cup.position[0], s.scene.cup.position[1], s.scene.cup.yaw
        ));
    }

    let manifest = DatasetManifest {
        format: FORMAT.into(),
        count,
        cameras: cfg.cameras,
        objects: cfg.objects,
        width: cfg.camera.width,
        height: cfg.camera.height,
        near: cfg.camera.near,
        far: cfg.camera.far,
        seed: cfg.seed,
        camera_stream: "dataset-camera".into(),
        object_stream: "dataset-object".into(),
        config: *cfg,
    };
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = out_dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&path, e))
    };
    write("samples.bin", &bin)?;
    write("poses.csv", csv.as_bytes())?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write("manifest.json", text.as_bytes())?;
    Ok(manifest)
}

/// A loaded dataset with depth kept in meters.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub depth: Vec<f32>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        if !mpath.exists() {
            return Err(Error::MissingArtifact(mpath));
        }
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
        if manifest.format != FORMAT {
            return Err(Error::format(&mpath, format!("unsupported format '{}'", manifest.format)));
        }
        let bpath = dir.join("samples.bin");
        let bytes = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let expected = manifest.count * manifest.width * manifest.height;
        if bytes.len() != expected * 4 {
            return Err(Error::format(
                &bpath,
                format!("expected {expected} values, found {} bytes", bytes.len()),
            ));
        }
        let depth = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        Ok(Self { manifest, depth })
    }

    pub fn len(&self) -> usize {
        self.manifest.count
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.count == 0
    }

    pub fn pixels(&self) -> usize {
        self.manifest.width * self.manifest.height
    }

    /// Rows `indices` as normalized pixels.
    pub fn normalized_rows(&self, indices: &[usize]) -> Tensor2 {
        let n = self.pixels();
        let span = self.manifest.far - self.manifest.near;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend(
                self.depth[i * n..(i + 1) * n]
                    .iter()
                    .map(|&d| (f64::from(d) - self.manifest.near) / span),
            );
        }
        Tensor2::new(indices.len(), n, data).expect("consistent row width")
    }
}
