mod common;

use common::oracle;
use nalgebra::{Point3, Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_mvs::evaluation::*;
use robust_mvs::fusion::PointCloud;
use robust_mvs::imaging::DepthMap;
use robust_mvs::Error;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3<f64>> {
    (0..n)
        .map(|_| Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..10.0)))
        .collect()
}

fn arrays(points: &[Point3<f64>]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

#[test]
fn self_comparison_is_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud = PointCloud::from_points(random_cloud(&mut rng, 500));
    let m = cloud_distance_metrics(&cloud, &cloud, &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!((m.accuracy_mean, m.completeness_mean, m.overall), (0.0, 0.0, 0.0));
    for t in &m.thresholds {
        assert_eq!((t.precision, t.recall, t.f_score), (100.0, 100.0, 100.0));
    }
}

#[test]
fn translated_copy_is_off_by_the_translation() {
    // A grid with spacing larger than twice the shift keeps the shifted copy as the nearest point.
    let grid: Vec<Point3<f64>> = (0..1000).map(|i| Point3::new((i % 10) as f64, ((i / 10) % 10) as f64, (i / 100) as f64)).collect();
    let t = Vector3::new(0.12, -0.05, 0.2);
    let moved: Vec<Point3<f64>> = grid.iter().map(|p| p + t).collect();
    let m = cloud_distance_metrics(&PointCloud::from_points(moved), &PointCloud::from_points(grid), &[0.1, 1.0]).unwrap();
    assert!((m.accuracy_mean - t.norm()).abs() < 1e-9);
    assert!((m.completeness_mean - t.norm()).abs() < 1e-9);
    assert!((m.accuracy_median - t.norm()).abs() < 1e-9);
    assert_eq!((m.thresholds[0].precision, m.thresholds[0].f_score), (0.0, 0.0));
    assert_eq!(m.thresholds[1].f_score, 100.0);
}

#[test]
fn three_point_clouds_match_hand_computation() {
    let recon = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 3.0, 0.0)];
    let truth = vec![Point3::new(0.0, 0.0, 0.5), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 0.0, 4.0)];
    let m = cloud_distance_metrics(&PointCloud::from_points(recon.clone()), &PointCloud::from_points(truth.clone()), &[1.0]).unwrap();
    // Accuracy: 0.5, 0, sqrt(9 + 0.25). Completeness: 0.5, 0, 4.
    let acc = [0.5, 0.0, 9.25f64.sqrt()];
    let comp = [0.5, 0.0, 4.0];
    assert!((m.accuracy_mean - oracle::mean(&acc)).abs() < 1e-12);
    assert!((m.completeness_mean - oracle::mean(&comp)).abs() < 1e-12);
    assert_eq!(m.accuracy_median, 0.5);
    assert_eq!(m.completeness_median, 0.5);
    let t = &m.thresholds[0];
    assert!((t.precision - 200.0 / 3.0).abs() < 1e-9);
    assert!((t.recall - 200.0 / 3.0).abs() < 1e-9);
    assert_eq!(oracle::nn_brute_force(&arrays(&recon), &arrays(&truth)), acc.to_vec());
}

#[test]
fn random_clouds_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let a = random_cloud(&mut rng, 300);
        let b = random_cloud(&mut rng, 200);
        let fast = nearest_distances(&a, &b).unwrap();
        let slow = oracle::nn_brute_force(&arrays(&a), &arrays(&b));
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-12);
        }
        let m = cloud_distance_metrics(&PointCloud::from_points(a.clone()), &PointCloud::from_points(b.clone()), &[0.5, 1.0]).unwrap();
        let comp = oracle::nn_brute_force(&arrays(&b), &arrays(&a));
        assert!((m.accuracy_median - oracle::median(&slow)).abs() < 1e-12);
        assert!((m.completeness_mean - oracle::mean(&comp)).abs() < 1e-12);
        for t in &m.thresholds {
            assert_eq!(t.precision, oracle::percent_within(&slow, t.threshold));
            assert_eq!(t.recall, oracle::percent_within(&comp, t.threshold));
        }
    }
}

#[test]
fn empty_clouds_name_the_side() {
    let one = PointCloud::from_points(vec![Point3::origin()]);
    let empty = PointCloud::default();
    let e = cloud_distance_metrics(&empty, &one, &[1.0]).unwrap_err();
    assert!(matches!(e, Error::EmptyCloud("reconstruction")), "{e}");
    let e = cloud_distance_metrics(&one, &empty, &[1.0]).unwrap_err();
    assert!(matches!(e, Error::EmptyCloud("reference")), "{e}");
    assert!(e.to_string().contains("reference"));
}

#[test]
fn depth_metrics_on_exact_and_offset_maps() {
    let truth = DepthMap::from_fn(16, 12, |x, y| if x == 0 { 0.0 } else { 50.0 + (x * y) as f64 });
    let m = depth_validation_metrics(&truth, &truth).unwrap();
    assert_eq!(m.l1, Some(0.0));
    assert_eq!((m.within_1, m.within_3, m.within_3_percent), (100.0, 100.0, 100.0));
    assert_eq!(m.evaluated, 15 * 12);

    let off = DepthMap::from_fn(16, 12, |x, y| truth.get(x, y) + 2.0);
    let m = depth_validation_metrics(&off, &truth).unwrap();
    assert!((m.l1.unwrap() - 2.0).abs() < 1e-12);
    assert_eq!((m.within_1, m.within_3), (0.0, 100.0));
}

#[test]
fn depth_metrics_match_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth: Vec<f64> = (0..400).map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(5.0..60.0) }).collect();
    let pred: Vec<f64> = truth
        .iter()
        .map(|t| if rng.random_bool(0.05) { f64::NAN } else { t + rng.random_range(-4.0..4.0) })
        .collect();
    let (l1, w1, w3, wr) = oracle::depth_metrics(&pred, &truth);
    let m = depth_validation_metrics(&DepthMap::new(20, 20, pred).unwrap(), &DepthMap::new(20, 20, truth).unwrap()).unwrap();
    assert!((m.l1.unwrap() - l1).abs() < 1e-12);
    assert!((m.within_1 - w1).abs() < 1e-9);
    assert!((m.within_3 - w3).abs() < 1e-9);
    assert!((m.within_3_percent - wr).abs() < 1e-9);
    assert!(m.missing > 0);
}

#[test]
fn depth_metrics_need_valid_truth() {
    let empty = DepthMap::filled(4, 4, 0.0);
    assert!(matches!(depth_validation_metrics(&empty, &empty), Err(Error::NoValidPixels(_))));
    assert!(depth_validation_metrics(&DepthMap::filled(4, 3, 1.0), &DepthMap::filled(4, 4, 1.0)).is_err());
}

fn cloud_strategy() -> impl Strategy<Value = Vec<Point3<f64>>> {
    prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 1..60)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
}

proptest! {
    #[test]
    fn metrics_are_rigid_invariant(
        a in cloud_strategy(),
        b in cloud_strategy(),
        angles in (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0),
        shift in (-20.0f64..20.0, -20.0f64..20.0, -20.0f64..20.0),
    ) {
        let r = Rotation3::from_euler_angles(angles.0, angles.1, angles.2);
        let t = Vector3::new(shift.0, shift.1, shift.2);
        let move_all = |c: &[Point3<f64>]| PointCloud::from_points(c.iter().map(|p| r * p + t).collect());
        let m0 = cloud_distance_metrics(&PointCloud::from_points(a.clone()), &PointCloud::from_points(b.clone()), &[]).unwrap();
        let m1 = cloud_distance_metrics(&move_all(&a), &move_all(&b), &[]).unwrap();
        prop_assert!((m0.accuracy_mean - m1.accuracy_mean).abs() < 1e-9);
        prop_assert!((m0.completeness_mean - m1.completeness_mean).abs() < 1e-9);
        prop_assert!((m0.accuracy_median - m1.accuracy_median).abs() < 1e-9);
    }

    #[test]
    fn scores_grow_with_the_threshold(a in cloud_strategy(), b in cloud_strategy(), t0 in 0.0f64..5.0, dt in 0.0f64..5.0) {
        let m = cloud_distance_metrics(&PointCloud::from_points(a), &PointCloud::from_points(b), &[t0, t0 + dt]).unwrap();
        let (lo, hi) = (&m.thresholds[0], &m.thresholds[1]);
        prop_assert!(lo.precision <= hi.precision);
        prop_assert!(lo.recall <= hi.recall);
        prop_assert!(lo.f_score <= hi.f_score + 1e-12);
    }

    #[test]
    fn f_score_lies_between_its_inputs(p in 0.0f64..=100.0, r in 0.0f64..=100.0) {
        let f = f_score(p, r);
        prop_assert!(f >= p.min(r) - 1e-9 && f <= p.max(r) + 1e-9);
        prop_assert_eq!(f == 0.0, p == 0.0 || r == 0.0);
    }
}
