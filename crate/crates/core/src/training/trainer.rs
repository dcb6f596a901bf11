use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor};
use crate::geometry::{KdIndex, PointCloud, Vec3};
use crate::model::{forward, stack, BatchInput, ModelConfig, ModelParams, SampleInput};

use super::loss::{batch_loss, tau_targets};
use super::{lr_at, Adam, TrainConfig, TrainError};

/// A training shape with ground-truth oriented normals and its search index.
#[derive(Debug, Clone)]
pub struct TrainingShape {
    pub cloud: PointCloud,
    pub index: KdIndex,
}

impl TrainingShape {
    pub fn new(cloud: PointCloud, id: usize) -> Result<Self, TrainError> {
        if cloud.normals().is_none() {
            return Err(TrainError::MissingNormals(id));
        }
        let index = KdIndex::new(&cloud);
        Ok(Self { cloud, index })
    }

    fn normal(&self, i: usize) -> Vec3 {
        self.cloud.normals().expect("checked on construction")[i]
    }
}

/// Network input plus supervision for one query point.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub input: SampleInput,
    /// Ground-truth oriented normal of the query.
    pub gt_normal: Vec3,
    /// Ground-truth oriented normals of the patch points reaching the head.
    pub gt_neighbors: Vec<Vec3>,
    /// Coplanarity targets of those points.
    pub tau_target: Vec<f64>,
}

impl TrainingSample {
    pub fn new<R: Rng + ?Sized>(
        shape: &TrainingShape,
        q: usize,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self, TrainError> {
        let input = SampleInput::new(&shape.cloud, &shape.index, q, config, rng)?;
        let n = config.head_points();
        let gt_normal = shape.normal(q);
        let gt_neighbors = input.patch.neighbor_indices[..n].iter().map(|&i| shape.normal(i)).collect();
        let tau_target = tau_targets(&input.patch.local_coords[..n], &gt_normal);
        Ok(Self {
            input,
            gt_normal,
            gt_neighbors,
            tau_target,
        })
    }
}

/// Stacked samples.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub input: BatchInput,
    /// `(B, 1, 3)`
    pub gt_query: Tensor,
    /// `(B, N, 3)`
    pub gt_neighbors: Tensor,
    /// `(B, N, 1)`
    pub tau_target: Tensor,
}

impl TrainingBatch {
    pub fn from_samples(samples: &[TrainingSample]) -> Result<Self, TrainError> {
        let inputs: Vec<SampleInput> = samples.iter().map(|s| s.input.clone()).collect();
        let queries: Vec<[Vec3; 1]> = samples.iter().map(|s| [s.gt_normal]).collect();
        let q_refs: Vec<&[Vec3]> = queries.iter().map(|q| q.as_slice()).collect();
        let n_refs: Vec<&[Vec3]> = samples.iter().map(|s| s.gt_neighbors.as_slice()).collect();
        let n = samples.first().map_or(0, |s| s.tau_target.len());
        let tau: Vec<f64> = samples.iter().flat_map(|s| s.tau_target.iter().copied()).collect();
        Ok(Self {
            input: BatchInput::from_samples(&inputs)?,
            gt_query: stack(&q_refs)?,
            gt_neighbors: stack(&n_refs)?,
            tau_target: Tensor::new(vec![samples.len(), n, 1], tau)?,
        })
    }
}

/// Per-epoch training summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    /// Means of `[sin, sgn, mse, tau]`.
    pub components: [f64; 4],
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
}

/// Trains a freshly initialized model; see [`train_with`].
pub fn train(shapes: &[PointCloud], model: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(shapes, ModelParams::new(model.clone(), config.seed)?, config, |_| {})
}

/// Trains `params` on query points drawn uniformly from all points of
/// `shapes`. Deterministic given `config.seed`. `on_epoch` sees every
/// finished epoch.
pub fn train_with(
    shapes: &[PointCloud],
    mut params: ModelParams,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if shapes.is_empty() {
        return Err(TrainError::InvalidConfig("no training shapes".into()));
    }
    let model = params.config().clone();
    let shapes = shapes
        .iter()
        .enumerate()
        .map(|(i, c)| TrainingShape::new(c.clone(), i))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(small) = shapes.iter().position(|s| s.cloud.len() < model.patch_size) {
        return Err(TrainError::InvalidConfig(format!(
            "shape {small} has fewer than {} points",
            model.patch_size
        )));
    }
    let total_points: usize = shapes.iter().map(|s| s.cloud.len()).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new();
    let names = params.names();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = lr_at(epoch, config);
        let mut sums = [0.0; 5];
        let mut seen = 0usize;
        let mut remaining = config.samples_per_epoch;
        while remaining > 0 {
            let b = remaining.min(config.batch_size);
            remaining -= b;
            let samples = (0..b)
                .map(|_| {
                    let mut r = rng.random_range(0..total_points);
                    let shape = shapes
                        .iter()
                        .find(|s| {
                            let hit = r < s.cloud.len();
                            if !hit {
                                r -= s.cloud.len();
                            }
                            hit
                        })
                        .expect("r < total");
                    TrainingSample::new(shape, r, &model, &mut rng)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let batch = TrainingBatch::from_samples(&samples)?;

            let (grads, values, total) = {
                let mut g = Graph::with_precision(config.matmul_precision);
                let vars = params.bind(&mut g);
                let out = forward(&mut g, &vars, &model, &batch.input)?;
                let parts = batch_loss(&mut g, &out, &batch, config.lambda, model.ablation.no_sin_sgn)?;
                let total = g.value(parts.total).data()[0];
                let values = parts.values(&g);
                let grads = g.backward(parts.total)?;
                let grads: Vec<Tensor> = vars
                    .iter()
                    .map(|(name, v)| grads.get_or_zeros(v, params.get(name).expect("bound").shape()))
                    .collect();
                (grads, values, total)
            };
            if !total.is_finite() {
                return Err(TrainError::NonFiniteLoss(epoch + 1));
            }
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut tensors: Vec<&mut Tensor> = params.iter_mut().map(|(_, t)| t).collect();
            adam.step(&mut tensors, &grad_refs, &name_refs, lr)?;

            sums[0] += total * b as f64;
            for (s, v) in sums[1..].iter_mut().zip(values) {
                *s += v * b as f64;
            }
            seen += b;
        }
        let n = seen as f64;
        let stats = EpochStats {
            epoch: epoch + 1,
            lr,
            mean_loss: sums[0] / n,
            components: [sums[1] / n, sums[2] / n, sums[3] / n, sums[4] / n],
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome { params, history })
}

/// Writes `epoch,lr,mean_loss,sin,sgn,mse,tau` rows.
pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochStats]) -> std::io::Result<()> {
    writeln!(w, "epoch,lr,mean_loss,sin,sgn,mse,tau")?;
    for s in history {
        let c = s.components;
        writeln!(w, "{},{},{},{},{},{},{}", s.epoch, s.lr, s.mean_loss, c[0], c[1], c[2], c[3])?;
    }
    Ok(())
}
