use std::fmt;
use std::str::FromStr;

use super::ModelError;

/// Switches that disable one component of the network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Ablation {
    /// Replace the global latent code by zeros.
    pub no_shape: bool,
    /// Skip the F-layer blocks of the patch encoder (per-point lift only).
    pub no_patch: bool,
    /// Use uniform weights instead of the learned distance weights.
    pub no_weight: bool,
    /// Replace the attention aggregation by a plain max-pool.
    pub no_head: bool,
    /// Regress the oriented normal directly instead of direction plus sign.
    pub no_sin_sgn: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 5] = ["no_shape", "no_patch", "no_weight", "no_head", "no_sin_sgn"];

    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_none(&self) -> bool {
        *self == Self::default()
    }

    /// Enables the switch named `name` (one of [`Ablation::NAMES`]).
    pub fn set(&mut self, name: &str, on: bool) -> Result<(), ModelError> {
        match name {
            "no_shape" => self.no_shape = on,
            "no_patch" => self.no_patch = on,
            "no_weight" => self.no_weight = on,
            "no_head" => self.no_head = on,
            "no_sin_sgn" => self.no_sin_sgn = on,
            other => return Err(ModelError::InvalidConfig(format!("unknown ablation `{other}`"))),
        }
        Ok(())
    }

    fn flags(&self) -> [bool; 5] {
        [self.no_shape, self.no_patch, self.no_weight, self.no_head, self.no_sin_sgn]
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on: Vec<&str> = Self::NAMES
            .iter()
            .zip(self.flags())
            .filter(|(_, b)| *b)
            .map(|(n, _)| *n)
            .collect();
        if on.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&on.join(","))
        }
    }
}

impl FromStr for Ablation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut a = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty() && *p != "none") {
            a.set(part, true)?;
        }
        Ok(a)
    }
}

/// Network hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Points per local patch (k).
    pub patch_size: usize,
    /// Points in the global subsample (N_P).
    pub global_size: usize,
    /// Latent feature width (c).
    pub feature_dim: usize,
    /// Attention heads (m).
    pub heads: usize,
    /// Neighborhood sizes per patch encoder block, non-increasing.
    pub patch_scales: Vec<usize>,
    /// Neighborhood sizes per shape encoder block, non-increasing.
    pub global_scales: Vec<usize>,
    /// Fraction of the global set drawn with uniform weight (zeta).
    pub random_ratio: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Builds a config with patch scales `[k, k/2, k/4]` and global scales
    /// `[N_P/2, N_P/4, N_P/8]`; the first global layer still pools over all
    /// `N_P` points.
    pub fn with_sizes(patch_size: usize, global_size: usize, feature_dim: usize, heads: usize) -> Self {
        Self {
            patch_size,
            global_size,
            feature_dim,
            heads,
            patch_scales: default_scales(patch_size),
            global_scales: default_scales((global_size / 2).max(1)),
            random_ratio: 1.0 / 1.5,
            ablation: Ablation::none(),
        }
    }

    /// Sizes for desk-scale training runs.
    pub fn desk() -> Self {
        Self::with_sizes(128, 256, 128, 64)
    }

    /// Full-scale sizes.
    pub fn full() -> Self {
        Self::with_sizes(700, 1200, 128, 64)
    }

    /// Small sizes for gradient checks.
    pub fn tiny() -> Self {
        Self::with_sizes(16, 16, 16, 4)
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn hidden_dim(&self) -> usize {
        (self.feature_dim / 2).max(1)
    }

    /// Number of patch points that reach the attention head.
    pub fn head_points(&self) -> usize {
        *self.patch_scales.last().unwrap_or(&self.patch_size)
    }

    pub fn random_count(&self) -> usize {
        (self.global_size as f64 * self.random_ratio).floor() as usize
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.patch_size == 0 || self.global_size == 0 {
            return bad("patch_size and global_size must be positive".into());
        }
        if self.heads == 0 || self.feature_dim < self.heads {
            return bad(format!(
                "need 1 <= heads <= feature_dim, got heads={} feature_dim={}",
                self.heads, self.feature_dim
            ));
        }
        if !(0.0..=1.0).contains(&self.random_ratio) {
            return bad(format!("random_ratio {} outside [0, 1]", self.random_ratio));
        }
        for (name, scales, first) in [
            ("patch_scales", &self.patch_scales, self.patch_size),
            ("global_scales", &self.global_scales, self.global_size),
        ] {
            if scales.is_empty() || scales.contains(&0) {
                return bad(format!("{name} must be non-empty and positive"));
            }
            if scales[0] > first || scales.windows(2).any(|w| w[1] > w[0]) {
                return bad(format!("{name} {scales:?} must be non-increasing and start at most {first}"));
            }
        }
        Ok(())
    }
}

pub(crate) fn default_scales(n: usize) -> Vec<usize> {
    vec![n, (n / 2).max(1), (n / 4).max(1)]
}
