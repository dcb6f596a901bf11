//! Losses, the Adam optimizer and the training loop.

mod adam;
mod config;
mod loss;
mod trainer;

pub use adam::Adam;
pub use config::{lr_at, parse_run_config, RunConfig, TrainConfig};
pub use loss::{
    batch_loss, loss_mse, loss_sgn, loss_sin, loss_tau, sign_labels, tau_targets, weighted_total, LossParts, LAMBDA,
};
pub use trainer::{
    train, train_with, write_history_csv, EpochStats, TrainOutcome, TrainingBatch, TrainingSample, TrainingShape,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::geometry::GeometryError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("shape {0} has no ground-truth normals")]
    MissingNormals(usize),
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss in epoch {0}")]
    NonFiniteLoss(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
