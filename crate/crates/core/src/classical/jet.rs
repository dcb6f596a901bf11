//! Truncated bivariate polynomial ("n-jet") height-field fitting.

use nalgebra::{DMatrix, DVector, Matrix3};

use super::{canonicalize_sign, pca_frame, ClassicalError};
use crate::geometry::{extract_patch, KdIndex, Patch, PointCloud, Vec3};

const TIKHONOV: f64 = 1e-10;

/// Number of coefficients of an order-`n` jet.
pub fn monomial_count(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

/// Coefficients of `z = sum_k sum_j alpha[k-j, j] x^(k-j) y^j` in a local
/// frame, stored in the order `alpha[0,0], alpha[1,0], alpha[0,1],
/// alpha[2,0], alpha[1,1], alpha[0,2], ...`. Coefficients are in world units:
/// the fit is carried out in canonical patch coordinates and rescaled.
#[derive(Debug, Clone, PartialEq)]
pub struct JetCoefficients {
    pub order: usize,
    pub alpha: Vec<f64>,
    /// Rotation from world offsets to the fitting frame (z along the initial
    /// normal estimate).
    pub frame: Matrix3<f64>,
}

impl JetCoefficients {
    /// Position of `alpha[a, b]` in the coefficient vector.
    pub fn index(a: usize, b: usize) -> usize {
        let k = a + b;
        k * (k + 1) / 2 + b
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.alpha[Self::index(a, b)]
    }

    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        monomials(self.order, x, y)
            .iter()
            .zip(&self.alpha)
            .map(|(m, a)| m * a)
            .sum()
    }
}

fn monomials(order: usize, x: f64, y: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(monomial_count(order));
    for k in 0..=order {
        for j in 0..=k {
            out.push(x.powi((k - j) as i32) * y.powi(j as i32));
        }
    }
    out
}

/// Least-squares jet fit in the PCA frame of the patch.
pub fn jet_fit(patch: &Patch, order: usize) -> Result<JetCoefficients, ClassicalError> {
    let frame = pca_frame(&patch.local_coords)?;
    jet_fit_in_frame(patch, order, frame)
}

/// Least-squares jet fit in a caller-supplied orthonormal frame, solved via
/// damped normal equations.
pub fn jet_fit_in_frame(
    patch: &Patch,
    order: usize,
    frame: Matrix3<f64>,
) -> Result<JetCoefficients, ClassicalError> {
    if order == 0 {
        return Err(ClassicalError::InvalidArgument("jet order must be at least 1".into()));
    }
    let m = monomial_count(order);
    let n = patch.local_coords.len();
    if n < m {
        return Err(ClassicalError::RankDeficient(format!(
            "order {order} needs {m} points, patch has {n}"
        )));
    }
    let mut design = DMatrix::zeros(n, m);
    let mut heights = DVector::zeros(n);
    for (i, p) in patch.local_coords.iter().enumerate() {
        let local = frame * p;
        for (j, v) in monomials(order, local.x, local.y).into_iter().enumerate() {
            design[(i, j)] = v;
        }
        heights[i] = local.z;
    }
    let mut normal = design.transpose() * &design;
    for d in 0..m {
        normal[(d, d)] += TIKHONOV;
    }
    let rhs = design.transpose() * heights;
    let chol = normal
        .cholesky()
        .ok_or_else(|| ClassicalError::RankDeficient("singular normal equations".into()))?;
    let scaled = chol.solve(&rhs);
    if scaled.iter().any(|v| !v.is_finite()) {
        return Err(ClassicalError::RankDeficient("non-finite jet coefficients".into()));
    }

    let r = patch.patch_radius;
    let mut alpha = Vec::with_capacity(m);
    for k in 0..=order {
        let factor = r.powi(1 - k as i32);
        for j in 0..=k {
            alpha.push(scaled[JetCoefficients::index(k - j, j)] * factor);
        }
    }
    Ok(JetCoefficients { order, alpha, frame })
}

/// Normal of the fitted surface at the origin of the fitting frame, rotated
/// back to world coordinates.
pub fn jet_normal(coef: &JetCoefficients) -> Vec3 {
    let a10 = coef.get(1, 0);
    let a01 = coef.get(0, 1);
    let local = Vec3::new(-a10, -a01, 1.0) / (1.0 + a10 * a10 + a01 * a01).sqrt();
    coef.frame.transpose() * local
}

/// Canonicalized jet normals for every point of `cloud`.
pub fn jet_normals(
    cloud: &PointCloud,
    index: &KdIndex,
    k: usize,
    order: usize,
) -> Result<Vec<Vec3>, ClassicalError> {
    (0..cloud.len())
        .map(|q| {
            let patch = extract_patch(cloud, index, q, k)?;
            Ok(canonicalize_sign(jet_normal(&jet_fit(&patch, order)?)))
        })
        .collect()
}
