mod common;

use nalgebra::{Matrix3, Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_mvs::evaluation::nearest_distances;
use robust_mvs::fusion::*;
use robust_mvs::geometry::Camera;
use robust_mvs::imaging::{DepthMap, Image};
use robust_mvs::synth::{make_ablation_scene_sized, render, Covisibility, Scene, SceneKind};

fn fusion_views(scene: &Scene) -> Vec<FusionView> {
    (0..scene.cameras.len())
        .map(|v| {
            let r = render(scene, v).unwrap();
            FusionView {
                depth: r.depth,
                confidence: None,
                camera: scene.cameras[v].clone(),
                image: r.image,
            }
        })
        .collect()
}

fn plane_scene(w: usize, h: usize) -> Scene {
    make_ablation_scene_sized(SceneKind::TexturedPlane, 3, w, h).unwrap()
}

#[test]
fn principal_pixel_backprojects_onto_the_axis() {
    let cam = Camera::from_pose(100.0, (4.0, 3.0), Matrix3::identity(), Vector3::zeros(), (1.0, 20.0), (9, 7)).unwrap();
    let mut depth = DepthMap::filled(9, 7, 0.0);
    depth.set(4, 3, 7.5);
    let cloud = backproject(&depth, &cam, &Image::filled(9, 7, 1, 0.5)).unwrap();
    assert_eq!(cloud.points, vec![Point3::new(0.0, 0.0, 7.5)]);
    assert_eq!(cloud.colors, vec![[128, 128, 128]]);
}

#[test]
fn backprojection_round_trips_and_follows_translation() {
    let scene = plane_scene(32, 24);
    let cam = &scene.cameras[2];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let (x, y, d) = (rng.random_range(0.0..31.0), rng.random_range(0.0..23.0), rng.random_range(6.0..16.0));
        let (u, v, z) = cam.project(&cam.backproject(x, y, d)).unwrap();
        assert!((u - x).abs() < 1e-9 && (v - y).abs() < 1e-9 && (z - d).abs() < 1e-9);
    }
    let depth = DepthMap::from_fn(6, 5, |x, y| 8.0 + 0.1 * (x + y) as f64);
    let img = Image::filled(6, 5, 1, 0.2);
    let base = Camera::from_pose(50.0, (2.5, 2.0), Matrix3::identity(), Vector3::zeros(), (1.0, 20.0), (6, 5)).unwrap();
    let c = Vector3::new(0.5, -1.0, 2.0);
    let moved = Camera::from_pose(50.0, (2.5, 2.0), Matrix3::identity(), -c, (1.0, 20.0), (6, 5)).unwrap();
    let a = backproject(&depth, &base, &img).unwrap();
    let b = backproject(&depth, &moved, &img).unwrap();
    for (p, q) in a.points.iter().zip(&b.points) {
        assert!(((q - p) - c).norm() < 1e-12);
    }
}

#[test]
fn exact_renders_are_consistent_where_covisible() {
    let scene = plane_scene(64, 48);
    let views = fusion_views(&scene);
    let cfg = FusionConfig::default();
    let labels = render(&scene, 0).unwrap().covisibility;
    for j in 1..7 {
        let mask = consistency_check(&views[0].depth, &views[0].camera, &views[j].depth, &views[j].camera, &cfg).unwrap();
        let covis: Vec<usize> = (0..64 * 48).filter(|&p| labels[j - 1].labels[p] == Covisibility::Visible).collect();
        let ok = covis.iter().filter(|&&p| mask.data()[p]).count();
        assert!(ok as f64 > 0.99 * covis.len() as f64, "view {j}: {ok}/{}", covis.len());

        let pushed = DepthMap::from_fn(64, 48, |x, y| views[j].depth.get(x, y) * (1.0 + 2.0 * cfg.depth_tolerance));
        let none = consistency_check(&views[0].depth, &views[0].camera, &pushed, &views[j].camera, &cfg).unwrap();
        assert_eq!(none.count(), 0);
    }
    let own = consistency_check(&views[0].depth, &views[0].camera, &views[0].depth, &views[0].camera, &cfg).unwrap();
    assert_eq!(own.count(), 64 * 48);
}

#[test]
fn perfect_depths_fuse_onto_the_plane() {
    let scene = plane_scene(64, 48);
    let views = fusion_views(&scene);
    let cfg = FusionConfig::default();
    let fused = fuse(&views, &cfg).unwrap();
    assert!(fused.cloud.len() > 64 * 48 / 2);
    let rms = (fused.cloud.points.iter().map(|p| (p.z - 10.0).powi(2)).sum::<f64>() / fused.cloud.len() as f64).sqrt();
    let step = 10.0 / 127.0;
    assert!(rms < 0.1 * step, "rms {rms}");
    assert!(fused.cloud.support.iter().all(|&s| s as usize >= cfg.min_consistent_views));

    // Every seed pixel is confirmed by enough other views.
    let masks: Vec<Vec<_>> = (0..7)
        .map(|r| {
            (0..7)
                .map(|j| consistency_check(&views[r].depth, &views[r].camera, &views[j].depth, &views[j].camera, &cfg).unwrap())
                .collect()
        })
        .collect();
    assert_eq!(fused.seeds.len(), fused.cloud.len());
    for &(r, p) in &fused.seeds {
        let confirmed = (0..7).filter(|&j| j != r && masks[r][j].data()[p]).count();
        assert!(confirmed >= cfg.min_consistent_views);
    }
    let s = &fused.stats;
    assert_eq!(s.input_pixels, 7 * 64 * 48);
    assert_eq!(s.input_pixels, s.invalid_depth + s.low_confidence + s.inconsistent + s.consumed + s.fused_points);
}

#[test]
fn input_order_only_changes_which_duplicate_survives() {
    let scene = plane_scene(48, 36);
    let views = fusion_views(&scene);
    let cfg = FusionConfig::default();
    let a = fuse(&views, &cfg).unwrap().cloud;
    let reversed: Vec<FusionView> = views.iter().rev().cloned().collect();
    let b = fuse(&reversed, &cfg).unwrap().cloud;
    // Pixel footprint at the plane depth.
    let footprint = 10.0 / scene.cameras[0].intrinsics()[(0, 0)];
    for d in nearest_distances(&a.points, &b.points).unwrap() {
        assert!(d < 2.0 * footprint);
    }
    for d in nearest_distances(&b.points, &a.points).unwrap() {
        assert!(d < 2.0 * footprint);
    }
}

#[test]
fn single_view_is_plain_backprojection() {
    let scene = plane_scene(20, 16);
    let mut views = fusion_views(&scene);
    views.truncate(1);
    let threshold = 0.5;
    let conf: Vec<f64> = (0..320).map(|p| if p % 7 == 0 { 0.1 } else { 0.9 }).collect();
    views[0].confidence = Some(robust_mvs::sweep::ConfidenceMap::new(20, 16, conf, threshold).unwrap());
    let cfg = FusionConfig {
        min_consistent_views: 1,
        ..FusionConfig::default()
    };
    let fused = fuse(&views, &cfg).unwrap();
    let unfiltered = (0..320).filter(|p| p % 7 != 0).count();
    assert_eq!(fused.cloud.len(), unfiltered);
    assert_eq!(fused.stats.low_confidence, 320 - unfiltered);
}

#[test]
fn nothing_consistent_gives_an_empty_cloud() {
    let scene = plane_scene(20, 16);
    let mut views = fusion_views(&scene);
    for (i, v) in views.iter_mut().enumerate() {
        v.depth = DepthMap::filled(20, 16, 6.0 + i as f64);
    }
    let fused = fuse(&views, &FusionConfig::default()).unwrap();
    assert!(fused.cloud.is_empty());
    assert_eq!(fused.stats.inconsistent, 7 * 320);
}

#[test]
fn bad_configs_are_rejected() {
    let views = fusion_views(&plane_scene(20, 16));
    for cfg in [
        FusionConfig {
            min_consistent_views: 0,
            ..FusionConfig::default()
        },
        FusionConfig {
            depth_tolerance: 0.0,
            ..FusionConfig::default()
        },
    ] {
        assert!(fuse(&views, &cfg).is_err());
    }
}

fn noisy_views(seed: u64) -> Vec<FusionView> {
    let mut views = fusion_views(&plane_scene(32, 24));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut views {
        for d in v.depth.data_mut() {
            *d *= 1.0 + rng.random_range(-0.02..0.02);
        }
    }
    views
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // The point count itself is not monotone: a looser gate lets early seeds
    // absorb more partners. The gate is.
    #[test]
    fn tighter_tolerances_never_confirm_more_pixels(
        seed in 0u64..1000,
        depth_tol in 0.002f64..0.03,
        reproj_tol in 0.3f64..1.5,
        shrink in 0.3f64..1.0,
    ) {
        let views = noisy_views(seed);
        let loose = FusionConfig { depth_tolerance: depth_tol, reprojection_tolerance: reproj_tol, min_consistent_views: 2 };
        let tight = FusionConfig { depth_tolerance: depth_tol * shrink, reprojection_tolerance: reproj_tol * shrink, ..loose.clone() };
        for j in 1..views.len() {
            let a = consistency_check(&views[0].depth, &views[0].camera, &views[j].depth, &views[j].camera, &loose).unwrap();
            let b = consistency_check(&views[0].depth, &views[0].camera, &views[j].depth, &views[j].camera, &tight).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!(*x || !*y);
            }
        }
    }
}
