use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::geometry::{KdIndex, PointCloud, Vec3};

use super::{forward, BatchInput, ModelError, ModelParams, SampleInput};

/// Network output for one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedNormal {
    /// Unit unoriented direction.
    pub direction: Vec3,
    pub sign_logit: f64,
    /// `direction`, or its negation when the sign probability is below 0.5.
    pub oriented: Vec3,
}

impl OrientedNormal {
    pub fn new(direction: Vec3, sign_logit: f64) -> Self {
        let oriented = if sign_logit >= 0.0 { direction } else { -direction };
        Self {
            direction,
            sign_logit,
            oriented,
        }
    }

    /// Output of a model trained to regress oriented normals directly.
    pub fn unsigned(direction: Vec3) -> Self {
        Self {
            direction,
            sign_logit: f64::INFINITY,
            oriented: direction,
        }
    }
}

/// Random stream used to draw the global set of query `q`.
pub fn query_rng(seed: u64, q: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(q as u64);
    rng
}

/// Predicts the oriented normal of point `q`.
pub fn predict(
    cloud: &PointCloud,
    kd: &KdIndex,
    q: usize,
    params: &ModelParams,
    seed: u64,
) -> Result<OrientedNormal, ModelError> {
    Ok(predict_many(cloud, kd, &[q], params, seed, 1)?.remove(0))
}

/// Predicts the oriented normals of `queries`, `batch` at a time. Results
/// do not depend on the batch size.
pub fn predict_many(
    cloud: &PointCloud,
    kd: &KdIndex,
    queries: &[usize],
    params: &ModelParams,
    seed: u64,
    batch: usize,
) -> Result<Vec<OrientedNormal>, ModelError> {
    let config = params.config();
    let mut out = Vec::with_capacity(queries.len());
    for chunk in queries.chunks(batch.max(1)) {
        let samples = chunk
            .iter()
            .map(|&q| SampleInput::new(cloud, kd, q, config, &mut query_rng(seed, q)))
            .collect::<Result<Vec<_>, _>>()?;
        let input = BatchInput::from_samples(&samples)?;
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let f = forward(&mut g, &vars, config, &input)?;
        let raw = g.value(f.raw_direction).data();
        let dir = g.value(f.direction).data();
        let logits = g.value(f.sign_logit).data();
        for (i, &q) in chunk.iter().enumerate() {
            let r = &raw[3 * i..3 * i + 3];
            if (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt() < 1e-12 {
                return Err(ModelError::DegenerateNormal(q));
            }
            let d = Vec3::new(dir[3 * i], dir[3 * i + 1], dir[3 * i + 2]);
            out.push(if config.ablation.no_sin_sgn {
                OrientedNormal::unsigned(d)
            } else {
                OrientedNormal::new(d, logits[i])
            });
        }
    }
    Ok(out)
}
