//! Shared fixtures for the criterion benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shs_core::geometry::{generate_shape, KdIndex, PointCloud, ShapeKind};
use shs_core::model::ModelConfig;
use shs_core::training::{TrainingBatch, TrainingSample, TrainingShape};

pub fn sphere(n: usize) -> PointCloud {
    generate_shape(ShapeKind::Sphere, n, 1)
}

/// A training batch of `size` torus queries for `config`.
pub fn torus_batch(config: &ModelConfig, size: usize) -> TrainingBatch {
    let shape = TrainingShape::new(generate_shape(ShapeKind::Torus, 5000, 2), 0).expect("torus has normals");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<_> = (0..size)
        .map(|i| TrainingSample::new(&shape, i * 97, config, &mut rng).expect("valid query"))
        .collect();
    TrainingBatch::from_samples(&samples).expect("equal sample shapes")
}

pub fn index(cloud: &PointCloud) -> KdIndex {
    KdIndex::new(cloud)
}
