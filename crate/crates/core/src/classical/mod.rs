//! Classical unoriented normal estimators and MST orientation propagation.

mod jet;
mod mst;
mod pca;

pub use jet::{jet_fit, jet_fit_in_frame, jet_normal, jet_normals, monomial_count, JetCoefficients};
pub use mst::mst_orient;
pub use pca::{canonicalize_sign, pca_frame, pca_normal, pca_normals};

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum ClassicalError {
    #[error("rank-deficient neighborhood: {0}")]
    RankDeficient(String),
    #[error("neighbor graph has {0} connected components; increase k_graph")]
    DisconnectedGraph(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
