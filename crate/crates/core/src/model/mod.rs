//! The oriented normal network.
//!
//! A patch encoder and a shape encoder produce local and global latent
//! codes. They are fused per patch point and reduced by an attention head
//! to a unit direction and a sign logit.
//!
//! Parameters live in [`ModelParams`]; a forward pass binds them into an
//! autodiff [`Graph`](crate::autodiff::Graph) with [`ModelParams::bind`]
//! and calls [`forward`].

mod checkpoint;
mod config;
mod network;
mod params;
mod predict;
mod sampling;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{Ablation, ModelConfig};
pub use network::{
    attention_head, distance_beta, distance_weights, forward, fuse, linear, local_layer, mlp2, patch_encoder, shape_encoder,
    ForwardOutput, HeadOutput,
};
pub use params::{ModelParams, ParamVars};
pub use predict::{predict, predict_many, query_rng, OrientedNormal};
pub use sampling::{sample_global, sampling_weight, sampling_weights, stack, BatchInput, GlobalSample, SampleInput};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("degenerate normal at query {0}")]
    DegenerateNormal(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
