//! Synthetic shapes sampled uniformly by area, with analytic outward normals.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{GeometryError, PointCloud, Vec3};

pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.3;
/// Half edge length of the axis-aligned cube centered at the origin.
pub const BOX_HALF: f64 = 0.5;
/// Half edge length of the square patch of the plane `z = 0`.
pub const PLANE_HALF: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    /// Unit sphere at the origin.
    Sphere,
    /// Torus around the z axis with radii [`TORUS_MAJOR`] and [`TORUS_MINOR`].
    Torus,
    /// Cube with half edge [`BOX_HALF`].
    Box,
    /// Square of half edge [`PLANE_HALF`] in the plane `z = 0`, normal `+z`.
    Plane,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Sphere, ShapeKind::Torus, ShapeKind::Box, ShapeKind::Plane];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Torus => "torus",
            ShapeKind::Box => "box",
            ShapeKind::Plane => "plane",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| GeometryError::InvalidArgument(format!("unknown shape '{s}'")))
    }
}

/// Samples `n` points on the surface of `kind`, deterministic in `seed`.
///
/// # Panics
///
/// If `n == 0`.
pub fn generate_shape(kind: ShapeKind, n: usize, seed: u64) -> PointCloud {
    assert!(n > 0, "cannot sample an empty shape");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, nrm) = match kind {
            ShapeKind::Sphere => sample_sphere(&mut rng),
            ShapeKind::Torus => sample_torus(&mut rng),
            ShapeKind::Box => sample_box(&mut rng),
            ShapeKind::Plane => {
                let x = rng.random_range(-PLANE_HALF..PLANE_HALF);
                let y = rng.random_range(-PLANE_HALF..PLANE_HALF);
                (Vec3::new(x, y, 0.0), Vec3::z())
            }
        };
        points.push(p);
        normals.push(nrm);
    }
    PointCloud::with_normals(points, normals).expect("analytic normals are unit length")
}

fn sample_sphere<R: Rng>(rng: &mut R) -> (Vec3, Vec3) {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let len = v.norm();
        if len > 1e-9 {
            let p = v / len;
            return (p, p);
        }
    }
}

fn sample_torus<R: Rng>(rng: &mut R) -> (Vec3, Vec3) {
    // the area element is proportional to R + r cos(v)
    loop {
        let u = rng.random_range(0.0..TAU);
        let v = rng.random_range(0.0..TAU);
        let accept = rng.random_range(0.0..1.0);
        let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
        if accept * (TORUS_MAJOR + TORUS_MINOR) <= ring {
            let p = Vec3::new(ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin());
            let n = Vec3::new(v.cos() * u.cos(), v.cos() * u.sin(), v.sin());
            return (p, n);
        }
    }
}

fn sample_box<R: Rng>(rng: &mut R) -> (Vec3, Vec3) {
    let face = rng.random_range(0..6usize);
    let axis = face / 2;
    let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
    let mut p = Vec3::new(
        rng.random_range(-BOX_HALF..BOX_HALF),
        rng.random_range(-BOX_HALF..BOX_HALF),
        rng.random_range(-BOX_HALF..BOX_HALF),
    );
    p[axis] = sign * BOX_HALF;
    let mut n = Vec3::zeros();
    n[axis] = sign;
    (p, n)
}

/// Perturbs every point with isotropic Gaussian noise of standard deviation
/// `level * bbox_diagonal`. Normals are kept: they remain the ground truth of
/// the clean surface.
pub fn add_noise(cloud: &PointCloud, level: f64, seed: u64) -> Result<PointCloud, GeometryError> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(GeometryError::InvalidArgument(format!(
            "noise level must be non-negative, got {level}"
        )));
    }
    if level == 0.0 {
        return Ok(cloud.clone());
    }
    let sigma = level * cloud.bbox_diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let d: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            p + Vec3::from(d) * sigma
        })
        .collect();
    match cloud.normals() {
        Some(ns) => PointCloud::with_normals(points, ns.to_vec()),
        None => PointCloud::new(points),
    }
}

/// Non-uniform resampling of a cloud along the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Density {
    #[default]
    None,
    /// Removes the points of periodic slabs: the x extent is split into
    /// [`STRIPE_PERIODS`] periods and the third quarter of each is emptied.
    Stripe,
    /// Keeps each point with probability falling linearly from 1 at the
    /// smallest x to [`GRADIENT_MIN_KEEP`] at the largest.
    Gradient,
}

pub const STRIPE_PERIODS: usize = 8;
pub const GRADIENT_MIN_KEEP: f64 = 0.1;

impl FromStr for Density {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Density::None),
            "stripe" => Ok(Density::Stripe),
            "gradient" => Ok(Density::Gradient),
            _ => Err(GeometryError::InvalidArgument(format!(
                "unknown density '{s}'; expected none, stripe or gradient"
            ))),
        }
    }
}

/// Applies `density` to `cloud`; only [`Density::Gradient`] uses `seed`.
pub fn apply_density(cloud: &PointCloud, density: Density, seed: u64) -> Result<PointCloud, GeometryError> {
    let (lo, hi) = cloud
        .points()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
    let extent = hi - lo;
    let t = |p: &Vec3| if extent > 0.0 { (p.x - lo) / extent } else { 0.0 };
    match density {
        Density::None => Ok(cloud.clone()),
        Density::Stripe => cloud.filter(|_, p| {
            let phase = (t(p) * STRIPE_PERIODS as f64).fract();
            !(0.5..0.75).contains(&phase)
        }),
        Density::Gradient => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            cloud.filter(|_, p| rng.random::<f64>() < 1.0 - (1.0 - GRADIENT_MIN_KEEP) * t(p))
        }
    }
}
