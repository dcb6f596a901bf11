use rand::seq::index;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::geometry::{extract_patch, KdIndex, Patch, PointCloud, Vec3};

use super::{ModelConfig, ModelError};

/// Per-point sampling weight: `clamp(1 - 1.5 d / d_max, 0.05, 1)`, or 1 for
/// members of the uniformly drawn set.
pub fn sampling_weight(distance: f64, max_distance: f64, in_random_set: bool) -> f64 {
    if in_random_set {
        return 1.0;
    }
    let ratio = if max_distance > 0.0 { distance / max_distance } else { 0.0 };
    (1.0 - 1.5 * ratio).clamp(0.05, 1.0)
}

/// Sampling weights of every cloud point relative to `q`, given the random
/// index set.
pub fn sampling_weights(cloud: &PointCloud, q: &Vec3, random_set: &[usize]) -> Vec<f64> {
    let dist: Vec<f64> = cloud.points().iter().map(|p| (p - q).norm()).collect();
    let max = dist.iter().copied().fold(0.0, f64::max);
    let mut in_set = vec![false; cloud.len()];
    for &i in random_set {
        in_set[i] = true;
    }
    dist.iter()
        .zip(&in_set)
        .map(|(&d, &r)| sampling_weight(d, max, r))
        .collect()
}

/// A global point set drawn around one query.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSample {
    /// Indices into the cloud, nearest to `q` first (ties by index).
    pub indices: Vec<usize>,
    /// Coordinates translated by `-q` and divided by the bbox diagonal.
    pub coords: Vec<Vec3>,
}

/// Draws `size` points without replacement, biased towards `q`.
///
/// `floor(size * random_ratio)` points get weight 1 regardless of distance.
/// Clouds with at most `size` points are returned whole.
pub fn sample_global<R: Rng + ?Sized>(
    cloud: &PointCloud,
    q: &Vec3,
    size: usize,
    random_ratio: f64,
    rng: &mut R,
) -> Result<GlobalSample, ModelError> {
    let n = cloud.len();
    let mut indices: Vec<usize> = if n <= size {
        (0..n).collect()
    } else {
        let r = ((size as f64 * random_ratio).floor() as usize).min(n);
        let random_set = index::sample(rng, n, r).into_vec();
        let weights = sampling_weights(cloud, q, &random_set);
        index::sample_weighted(rng, n, |i| weights[i], size)
            .map_err(|e| ModelError::InvalidConfig(format!("global sampling failed: {e}")))?
            .into_vec()
    };
    let d2 = |i: usize| (cloud.point(i) - q).norm_squared();
    indices.sort_by(|&a, &b| d2(a).total_cmp(&d2(b)).then(a.cmp(&b)));
    let scale = 1.0 / cloud.bbox_diagonal().max(1e-12);
    let coords = indices.iter().map(|&i| (cloud.point(i) - q) * scale).collect();
    Ok(GlobalSample { indices, coords })
}

/// Network input for one query point.
#[derive(Debug, Clone)]
pub struct SampleInput {
    pub patch: Patch,
    pub global: GlobalSample,
}

impl SampleInput {
    pub fn new<R: Rng + ?Sized>(
        cloud: &PointCloud,
        kd: &KdIndex,
        q: usize,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let patch = extract_patch(cloud, kd, q, config.patch_size)?;
        let global = sample_global(cloud, &cloud.point(q), config.global_size, config.random_ratio, rng)?;
        Ok(Self { patch, global })
    }
}

/// Stacked inputs of a batch: patch `(B, k, 3)` and global `(B, N_P, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInput {
    pub patch: Tensor,
    pub global: Tensor,
}

impl BatchInput {
    pub fn from_samples(samples: &[SampleInput]) -> Result<Self, ModelError> {
        let patches: Vec<&[Vec3]> = samples.iter().map(|s| s.patch.local_coords.as_slice()).collect();
        let globals: Vec<&[Vec3]> = samples.iter().map(|s| s.global.coords.as_slice()).collect();
        Ok(Self {
            patch: stack(&patches)?,
            global: stack(&globals)?,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.patch.shape()[0]
    }
}

/// Stacks equally long point lists into a `(B, N, 3)` tensor.
pub fn stack(sets: &[&[Vec3]]) -> Result<Tensor, ModelError> {
    let n = sets.first().map_or(0, |s| s.len());
    if sets.is_empty() || sets.iter().any(|s| s.len() != n) {
        return Err(ModelError::InvalidConfig(format!(
            "cannot stack point sets of sizes {:?}",
            sets.iter().map(|s| s.len()).collect::<Vec<_>>()
        )));
    }
    let data = sets.iter().flat_map(|s| s.iter().flat_map(|p| [p.x, p.y, p.z])).collect();
    Ok(Tensor::new(vec![sets.len(), n, 3], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_shape, ShapeKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clamp_endpoints() {
        assert_eq!(sampling_weight(0.0, 2.0, false), 1.0);
        assert_eq!(sampling_weight(2.0, 2.0, false), 0.05);
        assert_eq!(sampling_weight(2.0, 2.0, true), 1.0);
        assert!((sampling_weight(0.5, 2.0, false) - 0.625).abs() < 1e-15);
    }

    #[test]
    fn weights_always_clamped() {
        let cloud = generate_shape(ShapeKind::Torus, 500, 3);
        let w = sampling_weights(&cloud, &cloud.point(7), &[1, 2, 3]);
        assert!(w.iter().all(|&v| (0.05..=1.0).contains(&v)));
        assert_eq!(w[7], 1.0);
    }

    #[test]
    fn global_sample_sorted_unique_and_scaled() {
        let cloud = generate_shape(ShapeKind::Sphere, 1000, 1);
        let q = cloud.point(0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = sample_global(&cloud, &q, 64, 1.0 / 1.5, &mut rng).unwrap();
        assert_eq!(s.indices.len(), 64);
        let mut u = s.indices.clone();
        u.sort();
        u.dedup();
        assert_eq!(u.len(), 64);
        let norms: Vec<f64> = s.coords.iter().map(|c| c.norm()).collect();
        assert!(norms.windows(2).all(|w| w[0] <= w[1]));
        let diag = cloud.bbox_diagonal();
        let back = cloud.point(s.indices[10]) - q;
        assert!((s.coords[10] * diag - back).norm() < 1e-12);
    }

    #[test]
    fn small_cloud_taken_whole() {
        let cloud = generate_shape(ShapeKind::Plane, 10, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = sample_global(&cloud, &cloud.point(3), 64, 0.5, &mut rng).unwrap();
        assert_eq!(s.indices.len(), 10);
        assert_eq!(s.indices[0], 3);
    }

    #[test]
    fn single_draw_frequencies_follow_weights() {
        // points on a line, q at the origin: weights 1, 0.625, 0.25, 0.05, 0.05
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64 * 0.2, 0.0, 0.0)).collect();
        let cloud = PointCloud::new(pts).unwrap();
        let q = Vec3::zeros();
        let w = sampling_weights(&cloud, &q, &[]);
        let total: f64 = w.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            let i = index::sample_weighted(&mut rng, 5, |i| w[i], 1).unwrap().index(0);
            counts[i] += 1;
        }
        for i in 0..5 {
            let expected = w[i] / total;
            let observed = counts[i] as f64 / draws as f64;
            assert!(((observed - expected) / expected).abs() < 0.03, "bucket {i}: {observed} vs {expected}");
        }
    }
}
