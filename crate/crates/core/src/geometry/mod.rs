//! Point-cloud containers, file I/O, nearest-neighbor search, patch
//! canonicalization and synthetic shapes with analytic normals.

mod cloud;
mod io;
mod kdtree;
mod patch;
mod shapes;

pub use cloud::PointCloud;
pub use io::{load_normals, load_xyz, parse_xyz, read_normals, save_normals, save_xyz, write_normals, write_xyz};
pub use kdtree::{brute_force_knn, KdIndex, Neighbor};
pub use patch::{extract_patch, Patch};
pub use shapes::{add_noise, apply_density, generate_shape, Density, ShapeKind, GRADIENT_MIN_KEEP, STRIPE_PERIODS};

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("degenerate patch around point {0}: all neighbors coincide with the query")]
    DegeneratePatch(usize),
    #[error("normals length {normals} does not match point count {points}")]
    LengthMismatch { points: usize, normals: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
