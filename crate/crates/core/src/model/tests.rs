use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check_report, sigmoid, Graph, Tensor, Var};
use crate::geometry::{generate_shape, KdIndex, PointCloud, ShapeKind, Vec3};

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Random coordinates ordered by distance to the origin, first row at the origin.
fn sorted_coords(rng: &mut ChaCha8Rng, b: usize, n: usize) -> Tensor {
    let mut data = Vec::new();
    for _ in 0..b {
        let mut pts: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                if i == 0 {
                    [0.0; 3]
                } else {
                    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2)]
                }
            })
            .collect();
        pts.sort_by(|a, b| {
            let na: f64 = a.iter().map(|v| v * v).sum();
            let nb: f64 = b.iter().map(|v| v * v).sum();
            na.total_cmp(&nb)
        });
        data.extend(pts.into_iter().flatten());
    }
    Tensor::new(vec![b, n, 3], data).unwrap()
}

fn tiny_batch(config: &ModelConfig, b: usize, seed: u64) -> BatchInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BatchInput {
        patch: sorted_coords(&mut rng, b, config.patch_size),
        global: sorted_coords(&mut rng, b, config.global_size),
    }
}

/// Runs a grad check over every parameter of `params` whose name starts
/// with one of `prefixes`, holding the others fixed.
fn check_params<F>(params: &ModelParams, prefixes: &[&str], mut f: F) -> f64
where
    F: FnMut(&mut Graph<'_>, &ParamVars) -> Result<Var, ModelError>,
{
    let (names, tensors): (Vec<String>, Vec<Tensor>) = params
        .iter()
        .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
        .map(|(n, t)| (n.to_string(), t.clone()))
        .unzip();
    assert!(!names.is_empty());
    let report = grad_check_report::<ModelError, _>(&tensors, 1e-5, |g, vars| {
        let mut pairs: Vec<(String, Var)> = names.iter().cloned().zip(vars.iter().copied()).collect();
        for (n, t) in params.iter() {
            if !names.iter().any(|m| m == n) {
                pairs.push((n.to_string(), g.constant(t.clone())));
            }
        }
        f(g, &ParamVars::from_vars(pairs))
    })
    .unwrap();
    if report.max_relative_error > 1e-4 {
        let (pi, i) = report.worst.unwrap();
        eprintln!("worst: {} [{}] {:?}", names[pi], i, report);
    }
    report.max_relative_error
}

/// A smooth scalar read-out of a `(B, N, c)` tensor.
fn readout(g: &mut Graph<'_>, x: Var, seed: u64) -> Result<Var, ModelError> {
    let shape = g.shape(x).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(random_tensor(&mut rng, &shape, 1.0));
    let y = g.mul(x, w)?;
    Ok(g.sum(y))
}

#[test]
fn distance_weight_fixtures() {
    assert_relative_eq!(sigmoid(1.0), 0.731059, epsilon = 1e-6);
    let w = distance_weights(&[0.0, 0.0], 1.0, 1.0);
    assert_relative_eq!(w[0], 0.5, epsilon = 1e-15);
    assert_eq!(distance_weights(&[3.7], 1.0, 1.0), vec![1.0]);
}

#[test]
fn distance_weights_positive_normalized_decreasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let mut d: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        d.sort_by(f64::total_cmp);
        let g2 = rng.random_range(0.1..3.0);
        let w = distance_weights(&d, rng.random_range(-2.0..2.0), g2);
        assert!(w.iter().all(|&v| v > 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.windows(2).all(|p| p[0] > p[1] || d.windows(2).any(|q| q[0] == q[1])));
    }
}

fn layer_case(config: &ModelConfig, n_in: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = random_tensor(&mut rng, &[2, n_in, config.feature_dim], 1.0);
    let mut d: Vec<f64> = (0..2 * n_in).map(|_| rng.random_range(0.0..1.0)).collect();
    for row in d.chunks_mut(n_in) {
        row.sort_by(f64::total_cmp);
    }
    (z, Tensor::new(vec![2, n_in, 1], d).unwrap())
}

#[test]
fn local_layer_with_single_point_depends_on_that_point_only() {
    let config = ModelConfig::tiny();
    let params = ModelParams::new(config.clone(), 1).unwrap();
    let (z, d) = layer_case(&config, 1, 2);
    let run = |z: &Tensor| {
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let (zv, dv) = (g.constant(z.clone()), g.constant(d.clone()));
        let out = local_layer(&mut g, &p, &config, "patch.b0.l0", zv, dv, 1).unwrap();
        assert_eq!(g.shape(out), &[2, 1, 16]);
        g.value(out).clone()
    };
    let a = run(&z);
    // changing the second batch item leaves the first untouched
    let mut z2 = z.clone();
    z2.data_mut()[16..].iter_mut().for_each(|v| *v += 0.5);
    let b = run(&z2);
    assert_eq!(a.data()[..16], b.data()[..16]);
    assert_ne!(a.data()[16..], b.data()[16..]);
}

#[test]
fn local_layer_invariant_to_pooled_permutation() {
    let config = ModelConfig::tiny();
    let params = ModelParams::new(config.clone(), 1).unwrap();
    let (z, _) = layer_case(&config, 8, 3);
    // equal distances beyond the kept prefix so the weights permute with the points
    let d = Tensor::new(vec![2, 8, 1], [0.0, 0.1, 0.2, 0.5, 0.5, 0.5, 0.5, 0.5].repeat(2)).unwrap();
    let run = |z: &Tensor| {
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let (zv, dv) = (g.constant(z.clone()), g.constant(d.clone()));
        let out = local_layer(&mut g, &p, &config, "patch.b1.l0", zv, dv, 3).unwrap();
        g.value(out).clone()
    };
    let a = run(&z);
    let c = config.feature_dim;
    let mut perm = z.clone();
    for b in 0..2 {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| z.data()[(b * 8 + i) * c..(b * 8 + i + 1) * c].to_vec()).collect();
        for (dst, src) in [3usize, 4, 5, 6, 7].iter().zip([7usize, 5, 3, 6, 4]) {
            perm.data_mut()[(b * 8 + dst) * c..(b * 8 + dst + 1) * c].copy_from_slice(&rows[src]);
        }
    }
    let b = run(&perm);
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn local_layer_gradient_matches_finite_differences() {
    let config = ModelConfig::tiny();
    let params = ModelParams::new(config.clone(), 5).unwrap();
    let (z, d) = layer_case(&config, 8, 6);
    let err = check_params(&params, &["patch.b1.l0."], |g, p| {
        let (zv, dv) = (g.constant(z.clone()), g.constant(d.clone()));
        let out = local_layer(g, p, &config, "patch.b1.l0", zv, dv, 4)?;
        readout(g, out, 9)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn patch_encoder_shape_and_seed_sensitivity() {
    let config = ModelConfig::tiny();
    let input = tiny_batch(&config, 3, 1);
    let run = |seed| {
        let params = ModelParams::new(config.clone(), seed).unwrap();
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let z = patch_encoder(&mut g, &p, &config, &input.patch).unwrap();
        assert_eq!(g.shape(z), &[3, 4, 16]);
        g.value(z).data()[..16].to_vec()
    };
    assert_ne!(run(1), run(2));
}

#[test]
fn patch_encoder_ignores_rigid_translation() {
    let config = ModelConfig::tiny();
    let cloud = generate_shape(ShapeKind::Torus, 400, 2);
    let shifted = PointCloud::new(cloud.points().iter().map(|p| p + Vec3::new(3.0, -7.0, 1.5)).collect()).unwrap();
    let params = ModelParams::new(config.clone(), 3).unwrap();
    let encode = |c: &PointCloud| {
        let kd = KdIndex::new(c);
        let s = SampleInput::new(c, &kd, 17, &config, &mut query_rng(0, 17)).unwrap();
        let input = BatchInput::from_samples(&[s]).unwrap();
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let z = patch_encoder(&mut g, &p, &config, &input.patch).unwrap();
        g.value(z).clone()
    };
    let (a, b) = (encode(&cloud), encode(&shifted));
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn shape_encoder_permutation_invariant() {
    let config = ModelConfig::tiny();
    let params = ModelParams::new(config.clone(), 3).unwrap();
    let input = tiny_batch(&config, 1, 4);
    let code = |t: &Tensor| {
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let z = shape_encoder(&mut g, &p, &config, t).unwrap();
        assert_eq!(g.shape(z), &[1, 1, 16]);
        g.value(z).clone()
    };
    let mut rows: Vec<&[f64]> = input.global.data().chunks(3).collect();
    rows.reverse();
    rows.swap(1, 5);
    let shuffled = Tensor::new(vec![1, 16, 3], rows.concat()).unwrap();
    let (a, b) = (code(&input.global), code(&shuffled));
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn shape_encoder_gradient_on_tiny_config() {
    let config = ModelConfig::with_sizes(8, 8, 8, 4);
    let params = ModelParams::new(config.clone(), 7).unwrap();
    let input = tiny_batch(&config, 1, 8);
    let err = check_params(&params, &["shape."], |g, p| {
        let z = shape_encoder(g, p, &config, &input.global)?;
        readout(g, z, 3)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn fuse_shapes_and_zero_code() {
    let config = ModelConfig::tiny();
    let params = ModelParams::new(config.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let zn = random_tensor(&mut rng, &[1, 1, 16], 1.0);
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let zv = g.constant(zn.clone());
    let zero = g.constant(Tensor::zeros(&[1, 1, 16]));
    let out = fuse(&mut g, &p, zv, zero).unwrap();
    assert_eq!(g.shape(out), &[1, 1, 16]);
    let theta = params.get("fuse.theta.w").unwrap();
    for j in 0..16 {
        let expect: f64 = (0..16).map(|i| zn.data()[i] * theta.data()[i * 16 + j]).sum();
        assert!((g.value(out).data()[j] - expect).abs() < 1e-12);
    }
}

#[test]
fn fuse_gradient() {
    let config = ModelConfig::tiny();
    let params = ModelParams::new(config.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let zn = random_tensor(&mut rng, &[2, 4, 16], 1.0);
    let zs = random_tensor(&mut rng, &[2, 1, 16], 1.0);
    let err = check_params(&params, &["fuse."], |g, p| {
        let (a, b) = (g.constant(zn.clone()), g.constant(zs.clone()));
        let out = fuse(g, p, a, b)?;
        readout(g, out, 4)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn single_point_attention_is_exactly_one() {
    let config = ModelConfig::tiny();
    let params = ModelParams::new(config.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = random_tensor(&mut rng, &[1, 1, 16], 1.0);
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let zv = g.constant(z);
    let head = attention_head(&mut g, &p, &config, zv).unwrap();
    let att = g.value(head.attention.unwrap());
    assert!(att.data().iter().all(|&a| a == 1.0));
    // with one point the aggregate is V(o) itself
    let o = g.mul(zv, head.tau).unwrap();
    let v = linear(&mut g, &p, "head.V", o).unwrap();
    let direct = mlp2(&mut g, &p, "head.O", v).unwrap();
    let direct = g.narrow(direct, 2, 0, 3).unwrap();
    assert_eq!(g.value(direct), g.value(head.raw_direction));
}

#[test]
fn attention_rows_are_distributions() {
    let config = ModelConfig::tiny();
    let params = ModelParams::new(config.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = random_tensor(&mut rng, &[2, 4, 16], 1.0);
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let zv = g.constant(z);
    let head = attention_head(&mut g, &p, &config, zv).unwrap();
    let att = g.value(head.attention.unwrap());
    let (n, m) = (4, config.heads);
    for b in 0..2 {
        for j in 0..m {
            let s: f64 = (0..n).map(|i| att.data()[(b * n + i) * m + j]).sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!((0..n).all(|i| att.data()[(b * n + i) * m + j] > 0.0));
        }
    }
}

#[test]
fn attention_head_gradient() {
    let config = ModelConfig::tiny();
    let params = ModelParams::new(config.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = random_tensor(&mut rng, &[2, 4, 16], 1.0);
    let err = check_params(&params, &["head."], |g, p| {
        let zv = g.constant(z.clone());
        let h = attention_head(g, p, &config, zv)?;
        let a = readout(g, h.direction, 1)?;
        let b = readout(g, h.sign_logit, 2)?;
        let c = readout(g, h.neighbor_normals, 3)?;
        let d = readout(g, h.tau, 4)?;
        let ab = g.add(a, b)?;
        let cd = g.add(c, d)?;
        Ok(g.add(ab, cd)?)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn predictions_are_unit_and_deterministic() {
    let config = ModelConfig::tiny();
    let params = ModelParams::new(config, 3).unwrap();
    let cloud = generate_shape(ShapeKind::Sphere, 300, 1);
    let kd = KdIndex::new(&cloud);
    let queries: Vec<usize> = (0..20).collect();
    let a = predict_many(&cloud, &kd, &queries, &params, 9, 7).unwrap();
    let b = predict_many(&cloud, &kd, &queries, &params, 9, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(predict(&cloud, &kd, 5, &params, 9).unwrap(), a[5]);
    for o in &a {
        assert!((o.direction.norm() - 1.0).abs() < 1e-6);
        assert!(o.oriented == o.direction || o.oriented == -o.direction);
    }
}

#[test]
fn every_ablation_changes_outputs() {
    let cloud = generate_shape(ShapeKind::Torus, 400, 1);
    let kd = KdIndex::new(&cloud);
    let queries: Vec<usize> = (0..8).collect();
    let run = |ablation: Ablation| {
        let params = ModelParams::new(ModelConfig::tiny().with_ablation(ablation), 3).unwrap();
        predict_many(&cloud, &kd, &queries, &params, 1, 8).unwrap()
    };
    let base = run(Ablation::none());
    for name in Ablation::NAMES {
        let mut a = Ablation::none();
        a.set(name, true).unwrap();
        let out = run(a);
        let differs = if name == "no_sin_sgn" {
            out.iter().zip(&base).any(|(x, y)| x.oriented != y.oriented || x.sign_logit != y.sign_logit)
        } else {
            out != base
        };
        assert!(differs, "{name} had no effect");
    }
}
