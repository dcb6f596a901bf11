use crate::autodiff::{Graph, Tensor, Var};
use crate::geometry::Vec3;
use crate::model::ForwardOutput;

use super::trainer::TrainingBatch;
use super::TrainError;

type Result<T> = std::result::Result<T, TrainError>;

/// Default loss weights for sin, sign, neighbor-normal and gate terms.
pub const LAMBDA: [f64; 4] = [0.1, 0.1, 0.5, 1.0];

/// `sum lambda_i L_i`.
pub fn weighted_total(components: [f64; 4], lambda: [f64; 4]) -> f64 {
    components.iter().zip(lambda).map(|(c, l)| c * l).sum()
}

/// Batch mean of `|n x n_gt|` for `(B, 1, 3)` inputs.
pub fn loss_sin(g: &mut Graph<'_>, n: Var, gt: Var) -> Result<Var> {
    let c = g.cross(n, gt)?;
    let c = g.square(c);
    let s = g.sum_reduce(c, 2)?;
    let s = g.sqrt(s);
    Ok(g.mean(s))
}

/// Sign labels `[n . n_gt > 0]` from the current direction values.
pub fn sign_labels(direction: &Tensor, gt: &Tensor) -> Vec<f64> {
    direction
        .data()
        .chunks_exact(3)
        .zip(gt.data().chunks_exact(3))
        .map(|(a, b)| if a[0] * b[0] + a[1] * b[1] + a[2] * b[2] > 0.0 { 1.0 } else { 0.0 })
        .collect()
}

/// Batch mean binary cross entropy of sigmoid(logits) against `labels`.
pub fn loss_sgn(g: &mut Graph<'_>, logits: Var, labels: &[f64]) -> Result<Var> {
    let l = g.bce_with_logits(logits, labels)?;
    Ok(g.mean(l))
}

/// `mean tau_i |n_i - n_gt_i|^2` over `(B, N, 3)` normals and `(B, N, 1)` gates.
pub fn loss_mse(g: &mut Graph<'_>, normals: Var, gt: Var, tau: Var) -> Result<Var> {
    let d = g.sub(normals, gt)?;
    let d = g.square(d);
    let d = g.sum_reduce(d, 2)?;
    let d = g.mul(d, tau)?;
    Ok(g.mean(d))
}

/// Coplanarity targets `exp(-(p_i . n)^2 / xi^2)` with
/// `xi = max(0.05^2, 0.3 mean (p_i . n)^2)`.
pub fn tau_targets(coords: &[Vec3], normal: &Vec3) -> Vec<f64> {
    let proj: Vec<f64> = coords.iter().map(|p| p.dot(normal).powi(2)).collect();
    let mean = proj.iter().sum::<f64>() / proj.len().max(1) as f64;
    let xi = (0.05f64 * 0.05).max(0.3 * mean);
    proj.iter().map(|d| (-d / (xi * xi)).exp()).collect()
}

/// `mean (tau_i - target_i)^2`.
pub fn loss_tau(g: &mut Graph<'_>, tau: Var, target: Var) -> Result<Var> {
    let d = g.sub(tau, target)?;
    let d = g.square(d);
    Ok(g.mean(d))
}

/// Loss components of one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    /// Sin loss, or the squared direction error when the sign head is ablated.
    pub sin: Var,
    pub sgn: Option<Var>,
    pub mse: Var,
    pub tau: Var,
}

impl LossParts {
    /// Values of `[sin, sgn, mse, tau]`; an ablated sign term reads 0.
    pub fn values(&self, g: &Graph<'_>) -> [f64; 4] {
        let v = |x: Var| g.value(x).data()[0];
        [v(self.sin), self.sgn.map_or(0.0, v), v(self.mse), v(self.tau)]
    }
}

/// Builds the weighted training loss for `batch` on top of `out`.
pub fn batch_loss(
    g: &mut Graph<'_>,
    out: &ForwardOutput,
    batch: &TrainingBatch,
    lambda: [f64; 4],
    regress_oriented: bool,
) -> Result<LossParts> {
    let gt = g.constant(batch.gt_query.clone());
    let (sin, sgn) = if regress_oriented {
        let d = g.sub(out.direction, gt)?;
        let d = g.square(d);
        let d = g.sum_reduce(d, 2)?;
        (g.mean(d), None)
    } else {
        let labels = sign_labels(g.value(out.direction), &batch.gt_query);
        let sin = loss_sin(g, out.direction, gt)?;
        (sin, Some(loss_sgn(g, out.sign_logit, &labels)?))
    };
    let gt_nbr = g.constant(batch.gt_neighbors.clone());
    let mse = loss_mse(g, out.neighbor_normals, gt_nbr, out.tau)?;
    let target = g.constant(batch.tau_target.clone());
    let tau = loss_tau(g, out.tau, target)?;

    let mut total = g.scale(sin, lambda[0]);
    if let Some(s) = sgn {
        let s = g.scale(s, lambda[1]);
        total = g.add(total, s)?;
    }
    let m = g.scale(mse, lambda[2]);
    total = g.add(total, m)?;
    let t = g.scale(tau, lambda[3]);
    total = g.add(total, t)?;
    Ok(LossParts {
        total,
        sin,
        sgn,
        mse,
        tau,
    })
}
