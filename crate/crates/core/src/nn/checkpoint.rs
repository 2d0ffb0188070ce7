//! Network and optimizer checkpoints.
//!
//! A checkpoint is a JSON manifest (`name.json`) describing layer sizes,
//! activations and the offset of every tensor, next to a sidecar
//! (`name.bin`) of little-endian `f64` values in declaration order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::mlp::{Activation, Dense, MlpNet, Parameters};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

const FORMAT: &str = "servo-rl-mlp/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Mlp,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub kind: CheckpointKind,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub binary: String,
    pub total_values: usize,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub step: u64,
    pub config: AdamConfig,
}

fn sidecar(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn entries(params: &Parameters, prefix: &str, start: usize) -> Vec<TensorEntry> {
    let mut offset = start;
    let mut out = Vec::new();
    for (i, l) in params.layers.iter().enumerate() {
        let (rows, cols) = l.weights.shape();
        out.push(TensorEntry {
            name: format!("{prefix}layer{i}.weights"),
            rows,
            cols,
            offset,
        });
        offset += rows * cols;
        out.push(TensorEntry {
            name: format!("{prefix}layer{i}.bias"),
            rows: 1,
            cols,
            offset,
        });
        offset += cols;
    }
    out
}

fn write_pair(path: &Path, manifest: &Manifest, values: impl Iterator<Item = f64>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = Vec::with_capacity(manifest.total_values * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let bin = sidecar(path);
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_pair(path: &Path) -> Result<(Manifest, Vec<f64>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(Error::format(path, format!("unsupported format '{}'", manifest.format)));
    }
    let bin = path.with_file_name(&manifest.binary);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != manifest.total_values * 8 {
        return Err(Error::format(
            &bin,
            format!("expected {} values, found {} bytes", manifest.total_values, bytes.len()),
        ));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((manifest, values))
}

fn rebuild(path: &Path, manifest: &Manifest, values: &[f64], prefix: &str) -> Result<Parameters> {
    let sizes = &manifest.layer_sizes;
    let mut layers = Vec::new();
    for i in 0..sizes.len().saturating_sub(1) {
        let find = |suffix: &str| -> Result<&TensorEntry> {
            let name = format!("{prefix}layer{i}.{suffix}");
            manifest
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))
        };
        let slice = |t: &TensorEntry| -> Result<Vec<f64>> {
            values
                .get(t.offset..t.offset + t.rows * t.cols)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::format(path, format!("tensor {} out of range", t.name)))
        };
        let w = find("weights")?;
        let b = find("bias")?;
        layers.push(Dense {
            weights: Tensor2::new(w.rows, w.cols, slice(w)?)?,
            bias: slice(b)?,
        });
    }
    Ok(Parameters { layers })
}

pub fn save_net(net: &MlpNet, path: &Path) -> Result<()> {
    let tensors = entries(net.params(), "", 0);
    let manifest = Manifest {
        format: FORMAT.into(),
        kind: CheckpointKind::Mlp,
        layer_sizes: net.sizes().to_vec(),
        activations: net.activations().to_vec(),
        binary: sidecar(path)
            .file_name()
            .expect("checkpoint path has a file name")
            .to_string_lossy()
            .into_owned(),
        total_values: net.num_params(),
        tensors,
        adam: None,
    };
    write_pair(path, &manifest, net.params().slices().flatten().copied())
}

pub fn load_net(path: &Path) -> Result<MlpNet> {
    let (manifest, values) = read_pair(path)?;
    if manifest.kind != CheckpointKind::Mlp {
        return Err(Error::format(path, "not a network checkpoint"));
    }
    let params = rebuild(path, &manifest, &values, "")?;
    MlpNet::from_parts(manifest.layer_sizes, manifest.activations, params)
}

/// Saves optimizer moments; `net` supplies the layer layout for the manifest.
pub fn save_adam(state: &AdamState, net: &MlpNet, path: &Path) -> Result<()> {
    let n = state.first_moment.len();
    let mut tensors = entries(&state.first_moment, "m.", 0);
    tensors.extend(entries(&state.second_moment, "v.", n));
    let manifest = Manifest {
        format: FORMAT.into(),
        kind: CheckpointKind::Adam,
        layer_sizes: net.sizes().to_vec(),
        activations: net.activations().to_vec(),
        binary: sidecar(path)
            .file_name()
            .expect("checkpoint path has a file name")
            .to_string_lossy()
            .into_owned(),
        total_values: 2 * n,
        tensors,
        adam: Some(AdamMeta {
            step: state.step,
            config: state.config,
        }),
    };
    let values = state
        .first_moment
        .slices()
        .chain(state.second_moment.slices())
        .flatten()
        .copied();
    write_pair(path, &manifest, values)
}

pub fn load_adam(path: &Path) -> Result<AdamState> {
    let (manifest, values) = read_pair(path)?;
    let meta = match (&manifest.kind, manifest.adam) {
        (CheckpointKind::Adam, Some(meta)) => meta,
        _ => return Err(Error::format(path, "not an optimizer checkpoint")),
    };
    Ok(AdamState {
        config: meta.config,
        step: meta.step,
        first_moment: rebuild(path, &manifest, &values, "m.")?,
        second_moment: rebuild(path, &manifest, &values, "v.")?,
    })
}
