use crate::autodiff::MatmulPrecision;
use crate::model::{Ablation, ModelConfig};

use super::loss::LAMBDA;
use super::TrainError;

/// Optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Epochs at which the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Query points drawn per epoch.
    pub samples_per_epoch: usize,
    /// Weights of the sin, sign, neighbor-normal and gate losses.
    pub lambda: [f64; 4],
    pub seed: u64,
    /// Arithmetic of the matrix products inside training graphs.
    pub matmul_precision: MatmulPrecision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Full-scale schedule: 800 epochs of 4096 queries.
    pub fn full() -> Self {
        Self {
            lr: 9e-4,
            decay_epochs: vec![400, 600, 800],
            decay_factor: 0.2,
            batch_size: 145,
            epochs: 800,
            samples_per_epoch: 4096,
            lambda: LAMBDA,
            seed: 0,
            matmul_precision: MatmulPrecision::F32,
        }
    }

    /// The same schedule compressed to 50 epochs.
    pub fn desk() -> Self {
        Self {
            decay_epochs: vec![25, 37, 50],
            batch_size: 16,
            epochs: 50,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor must be in (0, 1], got {}", self.decay_factor));
        }
        if self.batch_size == 0 || self.samples_per_epoch == 0 {
            return bad("batch_size and samples_per_epoch must be positive".into());
        }
        if self.lambda.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return bad(format!("loss weights must be non-negative, got {:?}", self.lambda));
        }
        Ok(())
    }
}

/// Learning rate for `epoch` (0-based): one decay per threshold reached.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let passed = config.decay_epochs.iter().filter(|&&e| epoch >= e).count();
    config.lr * config.decay_factor.powi(passed as i32)
}

/// Model and optimization settings read from one config file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn list(v: &str) -> Result<Vec<usize>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad integer `{s}`")))
        .collect()
}

/// Parses `key = value` lines (`#` starts a comment) on top of the desk
/// defaults. Unknown keys are rejected.
pub fn parse_run_config(text: &str) -> Result<RunConfig, TrainError> {
    let mut cfg = RunConfig::default();
    let mut patch_scales = None;
    let mut global_scales = None;
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| TrainError::InvalidConfig(format!("line {}: expected `key = value`", no + 1)))?;
        let err = |m: String| TrainError::InvalidConfig(format!("line {}: {key}: {m}", no + 1));
        macro_rules! num {
            () => {
                value.parse().map_err(|_| err(format!("cannot parse `{value}`")))?
            };
        }
        let m = &mut cfg.model;
        let t = &mut cfg.train;
        match key {
            "patch_size" => m.patch_size = num!(),
            "global_size" => m.global_size = num!(),
            "feature_dim" => m.feature_dim = num!(),
            "heads" => m.heads = num!(),
            "random_ratio" => m.random_ratio = num!(),
            "patch_scales" => patch_scales = Some(list(value).map_err(err)?),
            "global_scales" => global_scales = Some(list(value).map_err(err)?),
            "ablation" => m.ablation = value.parse::<Ablation>().map_err(|e| err(e.to_string()))?,
            "lr" => t.lr = num!(),
            "decay_epochs" => t.decay_epochs = list(value).map_err(err)?,
            "decay_factor" => t.decay_factor = num!(),
            "batch_size" => t.batch_size = num!(),
            "epochs" => t.epochs = num!(),
            "samples_per_epoch" => t.samples_per_epoch = num!(),
            "lambda_sin" => t.lambda[0] = num!(),
            "lambda_sgn" => t.lambda[1] = num!(),
            "lambda_mse" => t.lambda[2] = num!(),
            "lambda_tau" => t.lambda[3] = num!(),
            "seed" => t.seed = num!(),
            "matmul_precision" => t.matmul_precision = value.parse().map_err(err)?,
            _ => return Err(err("unknown key".into())),
        }
    }
    // scales follow the sizes unless given explicitly
    let sized = ModelConfig::with_sizes(
        cfg.model.patch_size,
        cfg.model.global_size,
        cfg.model.feature_dim,
        cfg.model.heads,
    );
    cfg.model.patch_scales = patch_scales.unwrap_or(sized.patch_scales);
    cfg.model.global_scales = global_scales.unwrap_or(sized.global_scales);
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_fixtures() {
        let c = TrainConfig::full();
        assert_eq!(lr_at(0, &c), 9e-4);
        assert!((lr_at(400, &c) - 1.8e-4).abs() < 1e-18);
        assert!((lr_at(700, &c) - 3.6e-5).abs() < 1e-18);
        assert!((lr_at(399, &c) - 9e-4).abs() < 1e-18);
    }

    #[test]
    fn schedule_non_increasing() {
        let c = TrainConfig::desk();
        let lrs: Vec<f64> = (0..60).map(|e| lr_at(e, &c)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn parse_overrides_and_rejects() {
        let cfg = parse_run_config("# tiny\npatch_size = 16\nglobal_size=16\nfeature_dim = 16\nheads = 4\nepochs = 2 # short\nablation = no_head\n").unwrap();
        assert_eq!(cfg.model.patch_scales, vec![16, 8, 4]);
        assert_eq!(cfg.model.global_scales, vec![8, 4, 2]);
        assert!(cfg.model.ablation.no_head);
        assert_eq!(cfg.train.epochs, 2);
        assert!(parse_run_config("bogus = 1").is_err());
        assert!(parse_run_config("lr = -1").is_err());
        assert!(parse_run_config("lr 1").is_err());
    }
}
