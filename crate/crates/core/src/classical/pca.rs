use nalgebra::{Matrix3, SymmetricEigen};

use super::ClassicalError;
use crate::geometry::{extract_patch, KdIndex, Patch, PointCloud, Vec3};

const EIGEN_FLOOR: f64 = 1e-12;

/// Flips `n` so that its z component is positive; when z is zero the first
/// nonzero component decides.
pub fn canonicalize_sign(n: Vec3) -> Vec3 {
    for a in [2, 0, 1] {
        if n[a] > 0.0 {
            return n;
        }
        if n[a] < 0.0 {
            return -n;
        }
    }
    n
}

/// Orthonormal frame from the patch covariance: rows are the major tangent,
/// the minor tangent and the (canonicalized) normal, so `frame * p` expresses
/// `p` in tangent-plane coordinates with the normal along z.
pub fn pca_frame(points: &[Vec3]) -> Result<Matrix3<f64>, ClassicalError> {
    if points.len() < 3 {
        return Err(ClassicalError::RankDeficient(format!(
            "{} points cannot define a plane",
            points.len()
        )));
    }
    let mean: Vec3 = points.iter().sum::<Vec3>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    if eig.eigenvalues[order[0]] < EIGEN_FLOOR && eig.eigenvalues[order[1]] < EIGEN_FLOOR {
        return Err(ClassicalError::RankDeficient(
            "neighborhood is collinear".to_string(),
        ));
    }
    let normal = canonicalize_sign(eig.eigenvectors.column(order[0]).normalize());
    let major = eig.eigenvectors.column(order[2]).normalize();
    let minor = normal.cross(&major);
    Ok(Matrix3::from_rows(&[
        major.transpose(),
        minor.transpose(),
        normal.transpose(),
    ]))
}

/// Smallest-eigenvalue eigenvector of the neighbor covariance, sign
/// canonicalized with [`canonicalize_sign`].
pub fn pca_normal(patch: &Patch) -> Result<Vec3, ClassicalError> {
    let frame = pca_frame(&patch.local_coords)?;
    Ok(frame.row(2).transpose())
}

/// PCA normals for every point of `cloud` over `k`-nearest-neighbor patches.
pub fn pca_normals(cloud: &PointCloud, index: &KdIndex, k: usize) -> Result<Vec<Vec3>, ClassicalError> {
    (0..cloud.len())
        .map(|q| pca_normal(&extract_patch(cloud, index, q, k)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Uniform};

    fn patch_of(points: Vec<Vec3>) -> Patch {
        let n = points.len();
        Patch {
            query_index: 0,
            neighbor_indices: (0..n).collect(),
            local_coords: points,
            patch_radius: 1.0,
        }
    }

    #[test]
    fn exact_plane() {
        let p = patch_of(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        ]);
        let n = pca_normal(&p).unwrap();
        assert!((n - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn collinear_points_are_rank_deficient() {
        let p = patch_of(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(2.0, 2.0, 2.0),
        ]);
        assert!(matches!(pca_normal(&p), Err(ClassicalError::RankDeficient(_))));
    }

    #[test]
    fn noisy_plane_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u = Uniform::new(-1.0, 1.0).unwrap();
        let noise = Normal::new(0.0, 0.01).unwrap();
        for _ in 0..20 {
            let pts = (0..64)
                .map(|_| Vec3::new(u.sample(&mut rng), u.sample(&mut rng), noise.sample(&mut rng)))
                .collect();
            let n = pca_normal(&patch_of(pts)).unwrap();
            assert!(n.z.clamp(-1.0, 1.0).acos().to_degrees() < 2.0);
        }
    }

    #[test]
    fn canonical_sign_rules() {
        assert_eq!(canonicalize_sign(Vec3::new(0.3, 0.0, -1.0)), Vec3::new(-0.3, 0.0, 1.0));
        assert_eq!(canonicalize_sign(Vec3::new(-1.0, 2.0, 0.0)), Vec3::new(1.0, -2.0, 0.0));
        assert_eq!(canonicalize_sign(Vec3::new(0.0, -1.0, 0.0)), Vec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn frame_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = Uniform::new(-1.0, 1.0).unwrap();
        let pts: Vec<Vec3> = (0..30)
            .map(|_| Vec3::new(u.sample(&mut rng), u.sample(&mut rng), u.sample(&mut rng)))
            .collect();
        let r = pca_frame(&pts).unwrap();
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
    }
}
