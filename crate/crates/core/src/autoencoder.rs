//! Depth-image autoencoder. The encoder output is the latent visual state the
//! policy sees; the decoder exists only to train it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_net, save_net};
use crate::nn::{Activation, AdamConfig, AdamState, MlpNet, Tensor2};
use crate::rng::substream;
use crate::scene::dataset::Dataset;
use crate::scene::{CameraModel, DepthImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    /// Per-batch decay of the weight average that is validated and saved;
    /// 0 uses the raw weights.
    #[serde(default)]
    pub ema_decay: f64,
    pub seed: u64,
    pub val_fraction: f64,
    /// Stop once validation MSE has improved by less than `min_improvement`
    /// over this many epochs.
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 64],
            latent: 16,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_decay: 0.985,
            ema_decay: 0.99,
            seed: 0,
            val_fraction: 0.1,
            patience: 20,
            min_improvement: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct AeMeta {
    width: usize,
    height: usize,
    near: f64,
    far: f64,
    latent: usize,
}

#[derive(Debug, Clone)]
pub struct AeModel {
    pub encoder: MlpNet,
    pub decoder: MlpNet,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl AeModel {
    pub fn new<R: rand::Rng + ?Sized>(
        cfg: &AeConfig,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let pixels = width * height;
        if cfg.latent == 0 || cfg.latent >= pixels {
            return Err(Error::Config(format!(
                "latent dimension {} must lie in 1..{pixels}",
                cfg.latent
            )));
        }
        let mut enc = vec![pixels];
        enc.extend(&cfg.hidden);
        enc.push(cfg.latent);
        let dec: Vec<usize> = enc.iter().rev().copied().collect();
        Ok(Self {
            encoder: MlpNet::new(&enc, Activation::Tanh, Activation::Identity, rng)?,
            decoder: MlpNet::new(&dec, Activation::Tanh, Activation::Identity, rng)?,
            width,
            height,
            near,
            far,
        })
    }

    pub fn for_camera<R: rand::Rng + ?Sized>(cfg: &AeConfig, cam: &CameraModel, rng: &mut R) -> Result<Self> {
        Self::new(cfg, cam.width, cam.height, cam.near, cam.far, rng)
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    fn check(&self, img: &DepthImage) -> Result<()> {
        if img.width != self.width || img.height != self.height {
            return Err(Error::Dimension {
                context: "autoencoder input image",
                expected: self.pixels(),
                actual: img.width * img.height,
            });
        }
        Ok(())
    }

    pub fn normalize(&self, img: &DepthImage) -> Vec<f64> {
        // Same arithmetic as `CameraModel::normalize_depth`, so codes computed
        // here and inside the environment agree bit for bit.
        let span = self.far - self.near;
        img.data.iter().map(|&d| (d - self.near) / span).collect()
    }

    pub fn encode(&self, img: &DepthImage) -> Result<LatentCode> {
        self.check(img)?;
        self.encode_normalized(&self.normalize(img))
    }

    pub fn encode_normalized(&self, pixels: &[f64]) -> Result<LatentCode> {
        let z = self.encoder.predict(&Tensor2::row_vector(pixels))?;
        Ok(LatentCode(z.into_data()))
    }

    /// Decoded image (meters) and the mean squared error over normalized pixels.
    pub fn reconstruct(&self, img: &DepthImage) -> Result<(DepthImage, f64)> {
        self.check(img)?;
        let x = Tensor2::row_vector(&self.normalize(img));
        let y = self.decoder.predict(&self.encoder.predict(&x)?)?;
        let mse = mse(&x, &y);
        let span = self.far - self.near;
        let data = y.data().iter().map(|&v| v * span + self.near).collect();
        Ok((DepthImage::new(self.width, self.height, data)?, mse))
    }

    /// Reconstruction MSE over a batch of normalized images (one per row).
    pub fn batch_mse(&self, x: &Tensor2) -> Result<f64> {
        let y = self.decoder.predict(&self.encoder.predict(x)?)?;
        Ok(mse(x, &y))
    }

    /// Writes `ae.json`, `encoder.json` and `decoder.json` (plus sidecars) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_net(&self.encoder, &dir.join("encoder.json"))?;
        save_net(&self.decoder, &dir.join("decoder.json"))?;
        let meta = AeMeta {
            width: self.width,
            height: self.height,
            near: self.near,
            far: self.far,
            latent: self.latent_dim(),
        };
        let path = dir.join("ae.json");
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("ae.json");
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: AeMeta = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let encoder = load_net(&dir.join("encoder.json"))?;
        let decoder = load_net(&dir.join("decoder.json"))?;
        let pixels = meta.width * meta.height;
        if encoder.input_dim() != pixels
            || decoder.output_dim() != pixels
            || encoder.output_dim() != meta.latent
            || decoder.input_dim() != meta.latent
        {
            return Err(Error::format(&path, "encoder/decoder shapes do not match metadata"));
        }
        Ok(Self {
            encoder,
            decoder,
            width: meta.width,
            height: meta.height,
            near: meta.near,
            far: meta.far,
        })
    }
}

/// Mean over all entries of the squared difference.
pub fn mse(x: &Tensor2, y: &Tensor2) -> f64 {
    debug_assert_eq!(x.shape(), y.shape());
    let n = x.data().len().max(1) as f64;
    x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedAe {
    pub model: AeModel,
    pub curve: Vec<CurveRow>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Deterministic shuffled split; at least one sample lands in each part.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "ae-split", 0));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// One optimizer step on a batch; returns the batch MSE before the update.
fn train_batch(model: &mut AeModel, opt: &mut (AdamState, AdamState), x: &Tensor2) -> Result<f64> {
    let z = model.encoder.forward(x)?;
    let y = model.decoder.forward(&z)?;
    let loss = mse(x, &y);
    if !loss.is_finite() {
        return Err(Error::NonFinite("autoencoder training loss".into()));
    }
    let scale = 2.0 / x.data().len() as f64;
    let mut g = y;
    for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
        *gv = (*gv - xv) * scale;
    }
    let dec = model.decoder.backward(&g)?;
    let enc = model.encoder.backward(&dec.input)?;
    opt.1.step(&mut model.decoder, &dec.params)?;
    opt.0.step(&mut model.encoder, &enc.params)?;
    Ok(loss)
}

fn blend(avg: &mut MlpNet, net: &MlpNet, decay: f64) {
    for (a, w) in avg.params_mut().slices_mut().flatten().zip(net.params().slices().flatten()) {
        *a = decay * *a + (1.0 - decay) * w;
    }
}

/// Trains from scratch on `data`. When `out_dir` is given the final model and
/// `curve.csv` are written there.
pub fn train_autoencoder(data: &Dataset, cfg: &AeConfig, out_dir: Option<&Path>) -> Result<TrainedAe> {
    if data.len() < 2 {
        return Err(Error::Config("autoencoder training needs at least two samples".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.ema_decay) {
        return Err(Error::Config(format!("ae.ema_decay must be in [0, 1), got {}", cfg.ema_decay)));
    }
    let m = &data.manifest;
    let mut model = AeModel::new(
        cfg,
        m.width,
        m.height,
        m.near,
        m.far,
        &mut substream(cfg.seed, "ae-init", 0),
    )?;
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut opt = (AdamState::new(&model.encoder, adam), AdamState::new(&model.decoder, adam));
    let (mut train, val) = split_indices(data.len(), cfg.val_fraction, cfg.seed);
    let val_x = data.normalized_rows(&val);
    let mut order_rng = substream(cfg.seed, "ae-batches", 0);
    let start = Instant::now();
    let mut curve: Vec<CurveRow> = Vec::new();
    let mut avg = model.clone();

    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut order_rng);
        let mut sum = 0.0;
        for chunk in train.chunks(cfg.batch_size) {
            let x = data.normalized_rows(chunk);
            sum += train_batch(&mut model, &mut opt, &x)? * chunk.len() as f64;
            blend(&mut avg.encoder, &model.encoder, cfg.ema_decay);
            blend(&mut avg.decoder, &model.decoder, cfg.ema_decay);
        }
        let val_mse = avg.batch_mse(&val_x)?;
        curve.push(CurveRow {
            epoch,
            train_mse: sum / train.len() as f64,
            val_mse,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        opt.0.config.learning_rate *= cfg.lr_decay;
        opt.1.config.learning_rate *= cfg.lr_decay;
        if curve.len() > cfg.patience {
            let before = curve[curve.len() - 1 - cfg.patience].val_mse;
            let best_since = curve[curve.len() - cfg.patience..]
                .iter()
                .map(|r| r.val_mse)
                .fold(f64::INFINITY, f64::min);
            if before - best_since < cfg.min_improvement {
                break;
            }
        }
    }
    let mut model = avg;
    model.encoder.clear_cache();
    model.decoder.clear_cache();

    if let Some(dir) = out_dir {
        model.save(dir)?;
        write_curve(&curve, &dir.join("curve.csv"))?;
    }
    Ok(TrainedAe {
        model,
        curve,
        train_indices: train,
        val_indices: val,
    })
}

pub fn write_curve(curve: &[CurveRow], path: &Path) -> Result<PathBuf> {
    let mut text = String::from("epoch,train_mse,val_mse,wall_seconds\n");
    for r in curve {
        text.push_str(&format!("{},{},{},{:.3}\n", r.epoch, r.train_mse, r.val_mse, r.wall_seconds));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}
