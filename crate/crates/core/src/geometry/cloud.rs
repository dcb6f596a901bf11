use super::{GeometryError, Vec3};

/// Positions with optional ground-truth oriented normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    bbox_diagonal: f64,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        let bbox_diagonal = bbox_diagonal(&points);
        Ok(Self {
            points,
            normals: None,
            bbox_diagonal,
        })
    }

    /// Builds a cloud with normals. Normals are re-normalized to unit length
    /// unless already unit within 1e-12, which keeps file round trips exact;
    /// a zero normal is rejected.
    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self, GeometryError> {
        if normals.len() != points.len() {
            return Err(GeometryError::LengthMismatch {
                points: points.len(),
                normals: normals.len(),
            });
        }
        let mut normals = normals;
        for n in normals.iter_mut() {
            let len = n.norm();
            if !(len > 0.0) || !len.is_finite() {
                return Err(GeometryError::InvalidArgument(format!(
                    "normal {n:?} cannot be normalized"
                )));
            }
            if (len - 1.0).abs() > 1e-12 {
                *n /= len;
            }
        }
        let mut cloud = Self::new(points)?;
        cloud.normals = Some(normals);
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bbox_diagonal
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.points.iter().sum();
        sum / self.points.len() as f64
    }

    /// Keeps the points (and normals) whose index satisfies `keep`.
    pub fn filter<F: FnMut(usize, &Vec3) -> bool>(&self, mut keep: F) -> Result<Self, GeometryError> {
        let mut points = Vec::new();
        let mut normals = Vec::new();
        for (i, p) in self.points.iter().enumerate() {
            if keep(i, p) {
                points.push(*p);
                if let Some(ns) = &self.normals {
                    normals.push(ns[i]);
                }
            }
        }
        match self.normals {
            Some(_) => Self::with_normals(points, normals),
            None => Self::new(points),
        }
    }

    pub fn without_normals(&self) -> Self {
        Self {
            points: self.points.clone(),
            normals: None,
            bbox_diagonal: self.bbox_diagonal,
        }
    }
}

pub(crate) fn bbox_diagonal(points: &[Vec3]) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}
