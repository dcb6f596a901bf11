use super::{GeometryError, KdIndex, PointCloud, Vec3};

/// A query point with its `k` nearest neighbors in canonical coordinates:
/// translated so the query sits at the origin and scaled by `1 / patch_radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub query_index: usize,
    /// Nearest first; the query itself is always element 0.
    pub neighbor_indices: Vec<usize>,
    pub local_coords: Vec<Vec3>,
    /// Distance from the query to its farthest retained neighbor.
    pub patch_radius: f64,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.local_coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_coords.is_empty()
    }

    /// Maps canonical coordinates back to world coordinates.
    pub fn to_world(&self, origin: &Vec3) -> Vec<Vec3> {
        self.local_coords
            .iter()
            .map(|p| p * self.patch_radius + origin)
            .collect()
    }
}

pub fn extract_patch(
    cloud: &PointCloud,
    index: &KdIndex,
    q: usize,
    k: usize,
) -> Result<Patch, GeometryError> {
    if q >= cloud.len() {
        return Err(GeometryError::InvalidArgument(format!(
            "query index {q} out of range for {} points",
            cloud.len()
        )));
    }
    if k == 0 || k > cloud.len() {
        return Err(GeometryError::InvalidArgument(format!(
            "patch size {k} must be in 1..={}",
            cloud.len()
        )));
    }
    let center = cloud.point(q);
    let found = index.knn(&center, k);
    // duplicates of q with a smaller index would otherwise precede it
    let mut neighbor_indices = Vec::with_capacity(k);
    neighbor_indices.push(q);
    neighbor_indices.extend(found.iter().map(|n| n.index).filter(|&i| i != q).take(k - 1));

    let radius = neighbor_indices
        .iter()
        .map(|&i| (cloud.point(i) - center).norm())
        .fold(0.0, f64::max);
    if radius < 1e-12 {
        return Err(GeometryError::DegeneratePatch(q));
    }
    let local_coords = neighbor_indices
        .iter()
        .map(|&i| (cloud.point(i) - center) / radius)
        .collect();
    Ok(Patch {
        query_index: q,
        neighbor_indices,
        local_coords,
        patch_radius: radius,
    })
}
