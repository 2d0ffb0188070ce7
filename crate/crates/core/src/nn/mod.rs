//! Dense tensors, multilayer perceptrons with reverse-mode gradients, and the
//! Adam optimizer. Every trainable network in the crate is an [`MlpNet`].

mod adam;
pub mod checkpoint;
mod mlp;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{Activation, Backprop, Dense, MlpNet, Parameters};
pub use tensor::Tensor2;
