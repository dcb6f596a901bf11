use crate::autodiff::{Graph, Tensor, Var};

use super::{BatchInput, ModelConfig, ModelError, ParamVars};

type Result<T> = std::result::Result<T, ModelError>;

/// Graph handles produced by one forward pass over a batch of size `B`.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// Unit direction `(B, 1, 3)`.
    pub direction: Var,
    /// Direction before normalization `(B, 1, 3)`.
    pub raw_direction: Var,
    /// Sign logit `(B, 1, 1)`.
    pub sign_logit: Var,
    /// Per-point gates `(B, N, 1)`.
    pub tau: Var,
    /// Per-point neighbor normals `(B, N, 3)`.
    pub neighbor_normals: Var,
    /// Per-head softmax weights `(B, N, m)`; absent when the head is ablated.
    pub attention: Option<Var>,
    /// Patch embeddings `(B, N, c)` before fusion.
    pub patch_embedding: Var,
    /// Global code `(B, 1, c)`.
    pub shape_code: Var,
}

/// `x W + b` over the last axis; the bias is optional.
pub fn linear(g: &mut Graph<'_>, p: &ParamVars, name: &str, x: Var) -> Result<Var> {
    dense(g, p, name, x, false)
}

fn dense(g: &mut Graph<'_>, p: &ParamVars, name: &str, x: Var, relu: bool) -> Result<Var> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b")).ok();
    Ok(g.linear(x, w, b, relu)?)
}

/// Two linear layers with a ReLU in between.
pub fn mlp2(g: &mut Graph<'_>, p: &ParamVars, name: &str, x: Var) -> Result<Var> {
    let h = dense(g, p, &format!("{name}0"), x, true)?;
    linear(g, p, &format!("{name}1"), h)
}

/// Unnormalized distance weight `sigmoid(g1 - g2 d)`.
pub fn distance_beta(distance: f64, gamma1: f64, gamma2: f64) -> f64 {
    crate::autodiff::sigmoid(gamma1 - gamma2 * distance)
}

/// Normalized distance weights `w_j = b_j / sum b` with `b_j` from
/// [`distance_beta`].
pub fn distance_weights(distances: &[f64], gamma1: f64, gamma2: f64) -> Vec<f64> {
    let beta: Vec<f64> = distances.iter().map(|&d| distance_beta(d, gamma1, gamma2)).collect();
    let total: f64 = beta.iter().sum();
    beta.into_iter().map(|b| b / total).collect()
}

/// Graph version of [`distance_weights`] on `(B, N, 1)` distances, scaled
/// by `N` so the weights average to one.
fn distance_weights_var(g: &mut Graph<'_>, p: &ParamVars, prefix: &str, dist: Var) -> Result<Var> {
    let n = g.shape(dist)[1] as f64;
    let t = g.mul(dist, p.get(&format!("{prefix}.gamma2"))?)?;
    let t = g.sub(p.get(&format!("{prefix}.gamma1"))?, t)?;
    let beta = g.sigmoid(t);
    let total = g.sum_reduce(beta, 1)?;
    let w = g.div(beta, total)?;
    Ok(g.scale(w, n))
}

/// One local latent code extraction layer.
///
/// `z` is `(B, N_l, c)` ordered nearest-first and `dist` the matching
/// `(B, N_l, 1)` distances to the query. Returns `(B, n_out, c)`.
pub fn local_layer(
    g: &mut Graph<'_>,
    p: &ParamVars,
    config: &ModelConfig,
    prefix: &str,
    z: Var,
    dist: Var,
    n_out: usize,
) -> Result<Var> {
    let c = config.feature_dim;
    let weighted = if config.ablation.no_weight {
        z
    } else {
        let w = distance_weights_var(g, p, prefix, dist)?;
        g.mul(z, w)?
    };
    let h = dense(g, p, &format!("{prefix}.C"), weighted, true)?;
    let pooled = g.max_reduce(h, 1)?;
    let b = dense(g, p, &format!("{prefix}.B"), pooled, true)?;

    // A applied to [z_i : b] with its weight split into the two row blocks
    let kept = g.narrow(z, 1, 0, n_out)?;
    let a = p.get(&format!("{prefix}.A.w"))?;
    let a_point = g.narrow(a, 0, 0, c)?;
    let a_pool = g.narrow(a, 0, c, c)?;
    let yb = g.linear(b, a_pool, Some(p.get(&format!("{prefix}.A.b"))?), false)?;
    Ok(g.linear(kept, a_point, Some(yb), true)?)
}

fn norms(coords: &Tensor) -> Tensor {
    let s = coords.shape();
    let data = coords
        .data()
        .chunks_exact(3)
        .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
        .collect();
    Tensor::new(vec![s[0], s[1], 1], data).expect("coordinate tensor")
}

/// Per-point lift followed by blocks of two F-layers.
fn encoder(
    g: &mut Graph<'_>,
    p: &ParamVars,
    config: &ModelConfig,
    prefix: &str,
    coords: &Tensor,
    scales: &[usize],
    run_blocks: bool,
) -> Result<Var> {
    if coords.rank() != 3 || coords.shape()[2] != 3 {
        return Err(ModelError::InvalidConfig(format!(
            "{prefix} coordinates must be (B, N, 3), got {:?}",
            coords.shape()
        )));
    }
    let n = coords.shape()[1];
    if scales.first().is_some_and(|&s| s > n) {
        return Err(ModelError::InvalidConfig(format!(
            "{prefix} encoder expects at least {} points, got {n}",
            scales[0]
        )));
    }
    let x = g.constant(coords.clone());
    let dist = g.constant(norms(coords));
    let h = dense(g, p, &format!("{prefix}.D0"), x, true)?;
    let mut z = dense(g, p, &format!("{prefix}.D1"), h, true)?;
    let last = *scales.last().unwrap_or(&n);
    if !run_blocks {
        return Ok(g.narrow(z, 1, 0, last)?);
    }
    let mut n_cur = n;
    for (b, &scale) in scales.iter().enumerate() {
        for l in 0..2 {
            let d = g.narrow(dist, 1, 0, n_cur)?;
            z = local_layer(g, p, config, &format!("{prefix}.b{b}.l{l}"), z, d, scale)?;
            n_cur = scale;
        }
    }
    Ok(z)
}

/// Patch embeddings `(B, N_last, c)`; row 0 belongs to the query point.
///
/// `patch` is `(B, k, 3)` in the canonical patch frame, query first and
/// ordered nearest-first.
pub fn patch_encoder(g: &mut Graph<'_>, p: &ParamVars, config: &ModelConfig, patch: &Tensor) -> Result<Var> {
    encoder(g, p, config, "patch", patch, &config.patch_scales, !config.ablation.no_patch)
}

/// Global latent code `(B, 1, c)` of a `(B, N_P, 3)` global set.
///
/// Points are reordered by distance to the query (coordinates break ties)
/// before encoding, so the code does not depend on input order.
pub fn shape_encoder(g: &mut Graph<'_>, p: &ParamVars, config: &ModelConfig, global: &Tensor) -> Result<Var> {
    let sorted = sort_by_norm(global);
    let z = encoder(g, p, config, "shape", &sorted, &config.global_scales, true)?;
    Ok(g.max_reduce(z, 1)?)
}

fn sort_by_norm(t: &Tensor) -> Tensor {
    let s = t.shape();
    let (b, n) = (s[0], s[1]);
    let mut data = Vec::with_capacity(t.numel());
    for item in t.data().chunks_exact(n * 3) {
        let mut rows: Vec<&[f64]> = item.chunks_exact(3).collect();
        rows.sort_by(|a, b| {
            let na = a.iter().map(|v| v * v).sum::<f64>();
            let nb = b.iter().map(|v| v * v).sum::<f64>();
            na.total_cmp(&nb)
                .then(a[0].total_cmp(&b[0]))
                .then(a[1].total_cmp(&b[1]))
                .then(a[2].total_cmp(&b[2]))
        });
        data.extend(rows.into_iter().flatten());
    }
    Tensor::new(vec![b, n, 3], data).expect("same shape")
}

/// `theta [z^n : z^s]` with the global code repeated over the patch points.
pub fn fuse(g: &mut Graph<'_>, p: &ParamVars, zn: Var, zs: Var) -> Result<Var> {
    let shape = g.shape(zn).to_vec();
    let rep = g.expand(zs, &shape)?;
    let cat = g.concat(zn, rep, 2)?;
    linear(g, p, "fuse.theta", cat)
}

/// Output of [`attention_head`].
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    pub raw_direction: Var,
    pub direction: Var,
    pub sign_logit: Var,
    pub tau: Var,
    pub neighbor_normals: Var,
    pub attention: Option<Var>,
}

/// Attention-weighted prediction of direction and sign from `(B, N, c)`
/// fused embeddings.
pub fn attention_head(g: &mut Graph<'_>, p: &ParamVars, config: &ModelConfig, z: Var) -> Result<HeadOutput> {
    let t = mlp2(g, p, "head.I", z)?;
    let tau = g.sigmoid(t);
    let o = g.mul(z, tau)?;
    let (agg, attention) = if config.ablation.no_head {
        (g.max_reduce(o, 1)?, None)
    } else {
        let scores = mlp2(g, p, "head.Q", o)?;
        let att = g.softmax(scores, 1)?;
        let weight = g.max_reduce(att, 2)?;
        let v = linear(g, p, "head.V", o)?;
        let weighted = g.mul(v, weight)?;
        (g.sum_reduce(weighted, 1)?, Some(att))
    };
    let out = mlp2(g, p, "head.O", agg)?;
    let raw_direction = g.narrow(out, 2, 0, 3)?;
    let sign_logit = g.narrow(out, 2, 3, 1)?;
    let direction = g.normalize(raw_direction)?;
    let neighbor_normals = mlp2(g, p, "head.delta", z)?;
    Ok(HeadOutput {
        raw_direction,
        direction,
        sign_logit,
        tau,
        neighbor_normals,
        attention,
    })
}

/// Full network on a batch.
pub fn forward(g: &mut Graph<'_>, p: &ParamVars, config: &ModelConfig, input: &BatchInput) -> Result<ForwardOutput> {
    let zn = patch_encoder(g, p, config, &input.patch)?;
    let shape_code = if config.ablation.no_shape {
        g.constant(Tensor::zeros(&[input.batch_size(), 1, config.feature_dim]))
    } else {
        shape_encoder(g, p, config, &input.global)?
    };
    let z = fuse(g, p, zn, shape_code)?;
    let head = attention_head(g, p, config, z)?;

    let zq = g.narrow(zn, 1, 0, 1)?;
    let codes = g.concat(zq, shape_code, 2)?;
    let extra = mlp2(g, p, "sign.G", codes)?;
    let sign_logit = g.add(head.sign_logit, extra)?;
    Ok(ForwardOutput {
        direction: head.direction,
        raw_direction: head.raw_direction,
        sign_logit,
        tau: head.tau,
        neighbor_normals: head.neighbor_normals,
        attention: head.attention,
        patch_embedding: zn,
        shape_code,
    })
}
