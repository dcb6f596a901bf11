//! Normal estimation metrics: angle RMSE, PGP curves with AUC, and the
//! majority-flip convention for baselines.

use std::fmt::Write as _;
use std::io::Write;

use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no errors to aggregate")]
    EmptyInput,
    #[error("{pred} predictions for {gt} ground-truth normals")]
    LengthMismatch { pred: usize, gt: usize },
}

/// Angle between `pred` and `gt` in degrees. The unoriented variant ignores
/// the sign. Computed with `atan2`, which stays accurate near 0 and 180.
pub fn angle_error(pred: &Vec3, gt: &Vec3, oriented: bool) -> f64 {
    let d = pred.dot(gt);
    let c = if oriented { d } else { d.abs() };
    pred.cross(gt).norm().atan2(c).to_degrees()
}

pub fn rmse(errors: &[f64]) -> Result<f64, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

/// Fraction of errors `<= t` on `steps + 1` thresholds evenly spaced over
/// `[0, max_threshold]`, with the trapezoidal area normalized to `[0, 1]`.
pub fn pgp_auc(errors: &[f64], max_threshold: f64, steps: usize) -> Result<(Vec<(f64, f64)>, f64), EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let steps = steps.max(1);
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let curve: Vec<(f64, f64)> = (0..=steps)
        .map(|i| {
            let t = max_threshold * i as f64 / steps as f64;
            let count = sorted.partition_point(|&e| e <= t);
            (t, count as f64 / n)
        })
        .collect();
    let area: f64 = curve.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum();
    Ok((curve, area / max_threshold))
}

/// Negates every prediction when strictly more than half point away from
/// the ground truth.
pub fn majority_flip(pred: &[Vec3], gt: &[Vec3]) -> Vec<Vec3> {
    let inward = pred.iter().zip(gt).filter(|(p, g)| p.dot(g) < 0.0).count();
    if 2 * inward > pred.len() {
        pred.iter().map(|p| -p).collect()
    } else {
        pred.to_vec()
    }
}

/// Fraction of predictions with a positive dot product with the ground truth.
pub fn sign_accuracy(pred: &[Vec3], gt: &[Vec3]) -> Result<f64, EvalError> {
    check_lengths(pred, gt)?;
    if pred.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(pred.iter().zip(gt).filter(|(p, g)| p.dot(g) > 0.0).count() as f64 / pred.len() as f64)
}

fn check_lengths(pred: &[Vec3], gt: &[Vec3]) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    Ok(())
}

/// Metrics of one prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse_oriented: f64,
    pub rmse_unoriented: f64,
    /// Unoriented PGP over 0..=90 degrees in 1 degree steps.
    pub pgp: Vec<(f64, f64)>,
    pub auc: f64,
    /// Oriented PGP over 0..=180 degrees in 1 degree steps.
    pub pgp_oriented: Vec<(f64, f64)>,
    pub auc_oriented: f64,
    /// Oriented angle errors, aligned with the points.
    pub per_point_errors: Vec<f64>,
}

impl EvalReport {
    pub fn new(pred: &[Vec3], gt: &[Vec3]) -> Result<Self, EvalError> {
        check_lengths(pred, gt)?;
        let oriented: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| angle_error(p, g, true)).collect();
        let unoriented: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| angle_error(p, g, false)).collect();
        let (pgp, auc) = pgp_auc(&unoriented, 90.0, 90)?;
        let (pgp_oriented, auc_oriented) = pgp_auc(&oriented, 180.0, 180)?;
        Ok(Self {
            rmse_oriented: rmse(&oriented)?,
            rmse_unoriented: rmse(&unoriented)?,
            pgp,
            auc,
            pgp_oriented,
            auc_oriented,
            per_point_errors: oriented,
        })
    }

    /// `key = value` lines followed by `pgp <t> <fraction>` rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "points = {}", self.per_point_errors.len());
        let _ = writeln!(s, "rmse_oriented = {}", self.rmse_oriented);
        let _ = writeln!(s, "rmse_unoriented = {}", self.rmse_unoriented);
        let _ = writeln!(s, "auc = {}", self.auc);
        let _ = writeln!(s, "auc_oriented = {}", self.auc_oriented);
        for (t, f) in &self.pgp {
            let _ = writeln!(s, "pgp {t} {f}");
        }
        for (t, f) in &self.pgp_oriented {
            let _ = writeln!(s, "pgp_oriented {t} {f}");
        }
        s
    }
}

/// Mean of per-shape RMSE values, the alternative to pooling all points.
pub fn shape_averaged_rmse(reports: &[EvalReport], oriented: bool) -> Result<f64, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let pick = |r: &EvalReport| if oriented { r.rmse_oriented } else { r.rmse_unoriented };
    Ok(reports.iter().map(pick).sum::<f64>() / reports.len() as f64)
}

/// Writes `x,y,z,error_degrees` rows for heatmap rendering.
pub fn write_heatmap_csv<W: Write>(mut w: W, points: &[Vec3], errors: &[f64]) -> std::io::Result<()> {
    writeln!(w, "x,y,z,error_degrees")?;
    for (p, e) in points.iter().zip(errors) {
        writeln!(w, "{},{},{},{}", p.x, p.y, p.z, e)?;
    }
    Ok(())
}
