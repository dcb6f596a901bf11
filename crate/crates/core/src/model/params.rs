use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};
use crate::autodiff::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    He(usize),
    /// Uniform in `±1 / sqrt(fan_in)`.
    Bias(usize),
    One,
}

/// Names and shapes of every trainable tensor for `config`.
pub(crate) fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    tensor_inits(config).into_iter().map(|(n, s, _)| (n, s)).collect()
}

fn tensor_inits(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let c = config.feature_dim;
    let h = config.hidden_dim();
    let mut out = Vec::new();
    let mut linear = |name: String, fan_in: usize, fan_out: usize, bias: bool| {
        out.push((format!("{name}.w"), vec![fan_in, fan_out], Init::He(fan_in)));
        if bias {
            out.push((format!("{name}.b"), vec![1, fan_out], Init::Bias(fan_in)));
        }
    };
    for (prefix, scales) in [("patch", &config.patch_scales), ("shape", &config.global_scales)] {
        linear(format!("{prefix}.D0"), 3, h, true);
        linear(format!("{prefix}.D1"), h, c, true);
        for b in 0..scales.len() {
            for l in 0..2 {
                let p = format!("{prefix}.b{b}.l{l}");
                linear(format!("{p}.C"), c, c, true);
                linear(format!("{p}.B"), c, c, true);
                linear(format!("{p}.A"), 2 * c, c, true);
            }
        }
    }
    linear("fuse.theta".into(), 2 * c, c, false);
    linear("head.I0".into(), c, h, true);
    linear("head.I1".into(), h, 1, true);
    linear("head.Q0".into(), c, h, true);
    linear("head.Q1".into(), h, config.heads, true);
    linear("head.V".into(), c, c, true);
    linear("head.O0".into(), c, h, true);
    linear("head.O1".into(), h, 4, true);
    linear("head.delta0".into(), c, h, true);
    linear("head.delta1".into(), h, 3, true);
    linear("sign.G0".into(), 2 * c, h, true);
    linear("sign.G1".into(), h, 1, true);
    for (prefix, scales) in [("patch", &config.patch_scales), ("shape", &config.global_scales)] {
        for b in 0..scales.len() {
            for l in 0..2 {
                for g in ["gamma1", "gamma2"] {
                    out.push((format!("{prefix}.b{b}.l{l}.{g}"), vec![1], Init::One));
                }
            }
        }
    }
    out
}

/// Trainable tensors of the network, keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Seeded initialization. Distance-weight scalars start at 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut entries = tensor_inits(&config);
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = entries
            .into_iter()
            .map(|(name, shape, init)| {
                let t = match init {
                    Init::One => Tensor::full(&shape, 1.0),
                    Init::He(fan_in) | Init::Bias(fan_in) => {
                        let bound = match init {
                            Init::He(_) => (6.0 / fan_in as f64).sqrt(),
                            _ => 1.0 / (fan_in as f64).sqrt(),
                        };
                        let n = shape.iter().product();
                        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                        Tensor::new(shape, data).expect("layout shape")
                    }
                };
                (name, t)
            })
            .collect();
        Ok(Self { config, tensors })
    }

    /// Assembles parameters from named tensors, checking them against the
    /// layout of `config`.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != tensors.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &expected {
            let t = tensors.get(name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::InvalidConfig(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Tensors in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Adds every tensor to `g` as a trainable leaf.
    pub fn bind<'p>(&'p self, g: &mut Graph<'p>) -> ParamVars {
        ParamVars {
            vars: self.tensors.iter().map(|(k, t)| (k.clone(), g.param(t))).collect(),
        }
    }
}

/// Graph handles of bound parameters.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Pairs names with existing graph variables.
    pub fn from_vars<S: Into<String>>(pairs: impl IntoIterator<Item = (S, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().map(|(n, v)| (n.into(), v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
