//! Small synthetic rigs shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix3, Point3, Vector3};
use robust_mvs::geometry::Camera;
use robust_mvs::imaging::{DepthMap, Image, View};
use robust_mvs::synth::{render, Lighting, Scene, Shape, Surface, Texture};

pub fn camera(f: f64, w: usize, h: usize, center: Vector3<f64>) -> Camera {
    let principal = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    Camera::from_pose(f, principal, Matrix3::identity(), -center, (6.0, 16.0), (w, h)).unwrap()
}

/// Fronto-parallel textured plane at depth 10 seen by purely translated
/// cameras whose disparities are whole pixels, so warping at the true depth
/// reproduces the reference exactly.
pub fn integer_disparity_scene(w: usize, h: usize) -> Scene {
    let f = 120.0;
    let shifts = [(2.0, 0.0), (-3.0, 0.0), (0.0, 2.0), (0.0, -1.0), (1.0, 1.0), (-2.0, 3.0)];
    let mut cameras = vec![camera(f, w, h, Vector3::zeros())];
    for (dx, dy) in shifts {
        cameras.push(camera(f, w, h, Vector3::new(dx * 10.0 / f, dy * 10.0 / f, 0.0)));
    }
    Scene {
        surfaces: vec![Surface {
            shape: Shape::Plane {
                point: Point3::new(0.0, 0.0, 10.0),
                normal: Vector3::new(0.0, 0.0, -1.0),
            },
            texture: Texture::Noise {
                seed: 11,
                frequency: 4.0,
                octaves: 2,
            },
        }],
        lights: vec![Lighting::default(); cameras.len()],
        cameras,
        light_dir: Vector3::new(0.3, -0.4, -1.0).normalize(),
        ambient: 0.3,
        noise_sigma: 0.0,
        seed: 1,
    }
}

pub fn views_of(scene: &Scene) -> (Image, Vec<View>, DepthMap) {
    let renders: Vec<_> = (0..scene.cameras.len()).map(|v| render(scene, v).unwrap()).collect();
    let views = (1..scene.cameras.len())
        .map(|v| View {
            image: renders[v].image.clone(),
            camera: scene.cameras[v].clone(),
        })
        .collect();
    (renders[0].image.clone(), views, renders[0].depth.clone())
}
