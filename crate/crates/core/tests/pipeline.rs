use shs_core::classical::{jet_normals, mst_orient};
use shs_core::eval::{majority_flip, EvalReport};
use shs_core::geometry::{add_noise, generate_shape, parse_xyz, write_xyz, KdIndex, ShapeKind};
use shs_core::model::{predict_many, read_checkpoint, write_checkpoint};
use shs_core::training::train;
use shs_core::{ModelConfig, TrainConfig};

#[test]
fn jet_then_mst_orients_a_torus() {
    let cloud = generate_shape(ShapeKind::Torus, 3000, 21);
    let kd = KdIndex::new(&cloud);
    let unoriented = jet_normals(&cloud, &kd, 32, 2).unwrap();
    let oriented = mst_orient(&cloud, &unoriented, 10).unwrap();
    let gt = cloud.normals().unwrap();
    let flipped = majority_flip(&oriented, gt);
    let report = EvalReport::new(&flipped, gt).unwrap();
    assert!(report.rmse_unoriented < 2.0, "{}", report.rmse_unoriented);
    assert!(report.rmse_oriented < 5.0, "{}", report.rmse_oriented);
}

#[test]
fn xyz_round_trip_keeps_estimates() {
    let cloud = add_noise(&generate_shape(ShapeKind::Box, 1500, 3), 0.002, 4).unwrap();
    let mut buf = Vec::new();
    write_xyz(&mut buf, &cloud).unwrap();
    let back = parse_xyz(buf.as_slice()).unwrap();
    let a = jet_normals(&cloud, &KdIndex::new(&cloud), 24, 2).unwrap();
    let b = jet_normals(&back, &KdIndex::new(&back), 24, 2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn trained_checkpoint_predicts_after_reload() {
    let shapes = vec![generate_shape(ShapeKind::Sphere, 400, 1), generate_shape(ShapeKind::Torus, 400, 2)];
    let config = TrainConfig {
        epochs: 2,
        samples_per_epoch: 32,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::desk()
    };
    let outcome = train(&shapes, &ModelConfig::tiny(), &config).unwrap();
    assert_eq!(outcome.history.len(), 2);
    assert!(outcome.history.iter().all(|e| e.mean_loss.is_finite()));

    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &outcome.params).unwrap();
    let params = read_checkpoint(bytes.as_slice()).unwrap();
    let cloud = generate_shape(ShapeKind::Sphere, 300, 9);
    let kd = KdIndex::new(&cloud);
    let queries: Vec<usize> = (0..40).collect();
    let first = predict_many(&cloud, &kd, &queries, &params, 5, 16).unwrap();
    let second = predict_many(&cloud, &kd, &queries, &params, 5, 7).unwrap();
    assert_eq!(first, second);
    for p in &first {
        assert!((p.oriented.norm() - 1.0).abs() < 1e-9);
    }
}
