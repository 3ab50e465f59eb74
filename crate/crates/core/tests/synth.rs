mod common;

use common::scenes::views_of;
use nalgebra::Point3;
use robust_mvs::imaging::inverse_warp;
use robust_mvs::synth::*;

#[test]
fn renders_are_deterministic_in_the_seed() {
    for kind in SceneKind::ALL {
        let a = make_ablation_scene_sized(kind, 21, 40, 30).unwrap();
        let b = make_ablation_scene_sized(kind, 21, 40, 30).unwrap();
        for v in 0..7 {
            let (ra, rb) = (render(&a, v).unwrap(), render(&b, v).unwrap());
            assert_eq!(ra.image, rb.image);
            assert_eq!(ra.depth, rb.depth);
        }
        let c = make_ablation_scene_sized(kind, 22, 40, 30).unwrap();
        assert_ne!(render(&a, 1).unwrap().image, render(&c, 1).unwrap().image);
    }
}

#[test]
fn reference_sees_the_plane_at_constant_depth() {
    let scene = make_ablation_scene(SceneKind::TexturedPlane, 0).unwrap();
    assert_eq!(scene.cameras.len(), 7);
    let r = render(&scene, 0).unwrap();
    for d in r.depth.data() {
        assert!((d - PLANE_DEPTH).abs() < 1e-12);
    }
}

#[test]
fn identical_cameras_render_identically() {
    let mut scene = make_ablation_scene_sized(SceneKind::TexturedPlane, 3, 32, 24).unwrap();
    scene.cameras[1] = scene.cameras[0].clone();
    let (a, b) = (render(&scene, 0).unwrap(), render(&scene, 1).unwrap());
    assert_eq!(a.image, b.image);
    assert_eq!(a.depth, b.depth);
}

#[test]
fn lighting_changes_intensities_but_not_depth() {
    let mut scene = make_ablation_scene_sized(SceneKind::TexturedPlane, 3, 32, 24).unwrap();
    let before = render(&scene, 2).unwrap();
    scene.lights[2] = Lighting { gain: 0.7, offset: 0.1 };
    let after = render(&scene, 2).unwrap();
    assert_eq!(before.depth, after.depth);
    for (a, b) in before.image.data().iter().zip(after.image.data()) {
        assert!((b - (0.7 * a + 0.1)).abs() < 1e-12);
    }
}

#[test]
fn lighting_shift_offsets_alternate() {
    let scene = make_ablation_scene(SceneKind::LightingShift, 0).unwrap();
    assert_eq!(scene.lights[0], Lighting::default());
    for v in 1..7 {
        let expected = if v % 2 == 1 { 0.1 } else { -0.1 };
        assert_eq!(scene.lights[v].offset, expected);
        assert_eq!(scene.lights[v].gain, 1.0);
    }
}

#[test]
fn textured_plane_is_fully_covisible() {
    let scene = make_ablation_scene(SceneKind::TexturedPlane, 5).unwrap();
    let r = render(&scene, 0).unwrap();
    for map in &r.covisibility {
        assert_eq!(map.count(Covisibility::Visible), 128 * 96, "view {}", map.other);
    }
}

/// Whether the open segment from `a` to `b` passes through the box.
fn segment_hits_box(a: &Point3<f64>, b: &Point3<f64>, min: &Point3<f64>, max: &Point3<f64>) -> bool {
    let d = b - a;
    let (mut t0, mut t1) = (1e-9, 1.0 - 1e-9);
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if a[i] < min[i] || a[i] > max[i] {
                return false;
            }
            continue;
        }
        let (mut lo, mut hi) = ((min[i] - a[i]) / d[i], (max[i] - a[i]) / d[i]);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = f64::max(t0, lo);
        t1 = f64::min(t1, hi);
    }
    t0 <= t1
}

#[test]
fn occlusion_labels_match_an_independent_ray_test() {
    let scene = make_ablation_scene(SceneKind::Occlusion, 2).unwrap();
    let slabs: Vec<(Point3<f64>, Point3<f64>)> = scene
        .surfaces
        .iter()
        .filter_map(|s| match &s.shape {
            Shape::Slab { min, max } => Some((*min, *max)),
            _ => None,
        })
        .collect();
    assert_eq!(slabs.len(), OCCLUDED_VIEWS.len());
    let r = render(&scene, 0).unwrap();
    let cam = &scene.cameras[0];
    let mut mismatches = 0;
    for map in &r.covisibility {
        let other = &scene.cameras[map.other];
        let eye = other.center();
        let mut occluded = 0;
        for y in 0..96 {
            for x in 0..128 {
                let p = cam.backproject(x as f64, y as f64, r.depth.get(x, y));
                let expected = match other.project(&p) {
                    Some((u, v, _)) if (0.0..=127.0).contains(&u) && (0.0..=95.0).contains(&v) => {
                        if slabs.iter().any(|(lo, hi)| segment_hits_box(&p, &eye, lo, hi)) {
                            Covisibility::Occluded
                        } else {
                            Covisibility::Visible
                        }
                    }
                    _ => Covisibility::OutOfView,
                };
                mismatches += usize::from(map.get(x, y) != expected);
                occluded += usize::from(expected == Covisibility::Occluded);
            }
        }
        if OCCLUDED_VIEWS.contains(&map.other) {
            assert!(occluded > 3000, "view {} occluded on {occluded}", map.other);
        } else {
            assert_eq!(occluded, 0);
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn warping_views_at_the_true_depth_reproduces_the_reference() {
    for kind in [SceneKind::TexturedPlane, SceneKind::TexturelessPatch] {
        let scene = make_ablation_scene(kind, 4).unwrap();
        let (src, views, truth) = views_of(&scene);
        for v in &views {
            let (warped, mask) = inverse_warp(&truth, &v.image, &scene.cameras[0], &v.camera).unwrap();
            let (mut sum, mut n) = (0.0, 0);
            for (p, ok) in mask.data().iter().enumerate() {
                if *ok {
                    sum += (warped.data()[p] - src.data()[p]).abs();
                    n += 1;
                }
            }
            assert!(n > 128 * 96 * 9 / 10);
            assert!(sum / (n as f64) < 2e-2, "{kind}: {}", sum / n as f64);
        }
    }
}

#[test]
fn textureless_patch_is_flat_inside_the_disc() {
    let scene = make_ablation_scene(SceneKind::TexturelessPatch, 1).unwrap();
    let r = render(&scene, 0).unwrap();
    let center = r.image.get(64, 48, 0);
    for (dx, dy) in [(-3i32, 0i32), (3, 0), (0, -3), (0, 3), (2, 2)] {
        let v = r.image.get((64 + dx) as usize, (48 + dy) as usize, 0);
        assert!((v - center).abs() < 1e-12);
    }
    let tilt = r.depth.get(64, 10) - r.depth.get(64, 86);
    assert!(tilt.abs() > 0.1);
}

#[test]
fn every_camera_sees_a_surface() {
    for kind in SceneKind::ALL {
        let scene = make_ablation_scene(kind, 0).unwrap();
        scene.validate().unwrap();
        for v in 0..7 {
            assert!(render(&scene, v).unwrap().depth.valid_count() > 0);
        }
    }
}

#[test]
fn empty_scene_is_rejected() {
    let mut scene = make_ablation_scene_sized(SceneKind::TexturedPlane, 0, 16, 12).unwrap();
    scene.surfaces.clear();
    assert!(render(&scene, 0).is_err());
    let mut scene = make_ablation_scene_sized(SceneKind::TexturedPlane, 0, 16, 12).unwrap();
    scene.surfaces[0].shape = Shape::Sphere {
        center: Point3::new(0.0, 0.0, -50.0),
        radius: 1.0,
    };
    assert!(scene.validate().is_err());
    assert!(render(&make_ablation_scene_sized(SceneKind::Occlusion, 0, 16, 12).unwrap(), 9).is_err());
}
