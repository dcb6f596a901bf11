//! Oriented normal estimation for 3D point clouds.
//!
//! The crate bundles three things that are usually found in separate code
//! bases:
//!
//! - classical unoriented estimators (PCA, n-jet fitting) together with
//!   minimum-spanning-tree orientation propagation,
//! - a small reverse-mode automatic differentiation engine over dense `f64`
//!   tensors,
//! - a neural network that regresses an unoriented normal and
//!   a sign logit from a local patch and a globally sampled point set,
//!   trained end-to-end with Adam.
//!
//! Evaluation metrics (angle RMSE, PGP/AUC, majority flip) live in [`eval`].

pub mod autodiff;
pub mod classical;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod training;

pub use autodiff::{AutodiffError, Graph, Tensor, Var};
pub use classical::{ClassicalError, JetCoefficients};
pub use eval::{EvalError, EvalReport};
pub use geometry::{GeometryError, KdIndex, Patch, PointCloud, ShapeKind, Vec3};
pub use model::{ModelConfig, ModelError, ModelParams, OrientedNormal};
pub use training::{TrainConfig, TrainError};
