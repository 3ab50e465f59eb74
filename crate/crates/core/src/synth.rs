//! Deterministic synthetic scenes: procedurally textured primitives seen by a
//! reference camera and a ring of neighbour cameras, rendered with exact
//! depth and geometric co-visibility labels.

use std::str::FromStr;

use nalgebra::{Matrix3, Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{look_at, Camera};
use crate::imaging::{DepthMap, Image};

const RAY_EPS: f64 = 1e-9;
const SHADOW_EPS: f64 = 1e-6;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let h = mix(seed ^ mix(x as u64 ^ mix(y as u64 ^ mix(z as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Value noise in `[0, 1]` at unit lattice frequency.
fn value_noise(seed: u64, p: Vector3<f64>) -> f64 {
    let base = p.map(f64::floor);
    let f = p - base;
    let (u, v, w) = (fade(f.x), fade(f.y), fade(f.z));
    let (x, y, z) = (base.x as i64, base.y as i64, base.z as i64);
    let mut acc = 0.0;
    for (dz, wz) in [(0, 1.0 - w), (1, w)] {
        for (dy, wy) in [(0, 1.0 - v), (1, v)] {
            for (dx, wx) in [(0, 1.0 - u), (1, u)] {
                acc += wx * wy * wz * lattice(seed, x + dx, y + dy, z + dz);
            }
        }
    }
    acc
}

/// Surface albedo as a function of the 3D surface point.
#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    Constant(f64),
    /// Band-limited multi-octave value noise mapped into `[0.15, 0.85]`.
    Noise {
        seed: u64,
        frequency: f64,
        octaves: u32,
    },
    /// `inner` inside the ball of `radius` around `center`, `outer` elsewhere.
    Patch {
        center: Point3<f64>,
        radius: f64,
        inner: Box<Texture>,
        outer: Box<Texture>,
    },
}

impl Texture {
    pub fn albedo(&self, p: &Point3<f64>) -> f64 {
        match self {
            Texture::Constant(a) => *a,
            Texture::Noise {
                seed,
                frequency,
                octaves,
            } => {
                let (mut acc, mut amp, mut norm, mut freq) = (0.0, 1.0, 0.0, *frequency);
                for o in 0..*octaves {
                    acc += amp * value_noise(mix(seed.wrapping_add(o as u64)), p.coords * freq);
                    norm += amp;
                    amp *= 0.5;
                    freq *= 2.0;
                }
                // Value noise sums concentrate around 0.5; stretch before clamping.
                let n = (0.5 + 1.8 * (acc / norm - 0.5)).clamp(0.0, 1.0);
                0.15 + 0.7 * n
            }
            Texture::Patch {
                center,
                radius,
                inner,
                outer,
            } => {
                if (p - center).norm() <= *radius {
                    inner.albedo(p)
                } else {
                    outer.albedo(p)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Infinite plane through `point` with unit `normal`.
    Plane { point: Point3<f64>, normal: Vector3<f64> },
    Sphere { center: Point3<f64>, radius: f64 },
    /// Axis-aligned box.
    Slab { min: Point3<f64>, max: Point3<f64> },
}

impl Shape {
    /// Smallest ray parameter `t > RAY_EPS` hitting the shape, with the
    /// surface normal there.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match self {
            Shape::Plane { point, normal } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = normal.dot(&(point - origin)) / denom;
                (t > RAY_EPS).then_some((t, *normal))
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.dot(dir);
                let b = oc.dot(dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / a, (-b + sq) / a]
                    .into_iter()
                    .find(|&t| t > RAY_EPS)
                    .map(|t| (t, (origin + dir * t - center) / *radius))
            }
            Shape::Slab { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut n0, mut n1) = (Vector3::zeros(), Vector3::zeros());
                for axis in 0..3 {
                    let mut axis_n = Vector3::zeros();
                    axis_n[axis] = 1.0;
                    if dir[axis].abs() < 1e-15 {
                        if origin[axis] < min[axis] || origin[axis] > max[axis] {
                            return None;
                        }
                        continue;
                    }
                    let (mut a, mut b) = ((min[axis] - origin[axis]) / dir[axis], (max[axis] - origin[axis]) / dir[axis]);
                    let mut na = -axis_n;
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                        na = axis_n;
                    }
                    if a > t0 {
                        t0 = a;
                        n0 = na;
                    }
                    if b < t1 {
                        t1 = b;
                        n1 = -na;
                    }
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > RAY_EPS {
                    Some((t0, n0))
                } else if t1 > RAY_EPS {
                    Some((t1, n1))
                } else {
                    None
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub shape: Shape,
    pub texture: Texture,
}

/// Per-view photometric change applied after shading: `gain * I + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lighting {
    pub gain: f64,
    pub offset: f64,
}

impl Default for Lighting {
    fn default() -> Self {
        Self { gain: 1.0, offset: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneKind {
    TexturedPlane,
    LightingShift,
    Occlusion,
    TexturelessPatch,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [
        SceneKind::TexturedPlane,
        SceneKind::LightingShift,
        SceneKind::Occlusion,
        SceneKind::TexturelessPatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::TexturedPlane => "textured_plane",
            SceneKind::LightingShift => "lighting_shift",
            SceneKind::Occlusion => "occlusion",
            SceneKind::TexturelessPatch => "textureless_patch",
        }
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownSceneKind(s.to_string()))
    }
}

impl std::fmt::Display for SceneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub surfaces: Vec<Surface>,
    /// Camera 0 is the reference.
    pub cameras: Vec<Camera>,
    pub lights: Vec<Lighting>,
    /// Unit direction towards the light source.
    pub light_dir: Vector3<f64>,
    pub ambient: f64,
    /// Standard deviation of additive Gaussian image noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Whether a surface point seen by one view is also seen by another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Covisibility {
    Visible,
    /// Projects inside the other view but another surface is in the way.
    Occluded,
    /// Projects outside the other view, or the pixel sees no surface.
    OutOfView,
}

/// Labels of every pixel of one view against another view.
#[derive(Debug, Clone, PartialEq)]
pub struct CovisibilityMap {
    pub other: usize,
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Covisibility>,
}

impl CovisibilityMap {
    pub fn get(&self, x: usize, y: usize) -> Covisibility {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, label: Covisibility) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

#[derive(Debug, Clone)]
pub struct Rendering {
    pub image: Image,
    pub depth: DepthMap,
    /// One map per other camera, in camera order.
    pub covisibility: Vec<CovisibilityMap>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::InvalidConfig("scene has no cameras".into()));
        }
        if self.lights.len() != self.cameras.len() {
            return Err(Error::InvalidConfig("need one lighting entry per camera".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise sigma must be non-negative".into()));
        }
        for (i, cam) in self.cameras.iter().enumerate() {
            let to_world = cam.rotation().transpose() * cam.intrinsics_inverse();
            let (w, h) = ((cam.width() - 1) as f64, (cam.height() - 1) as f64);
            let sees_something = (0..=4).any(|a| {
                (0..=4).any(|b| {
                    let dir = to_world * Vector3::new(w * a as f64 / 4.0, h * b as f64 / 4.0, 1.0);
                    self.cast(&cam.center(), &dir).is_some()
                })
            });
            if !sees_something {
                return Err(Error::InvalidConfig(format!("camera {i} sees no surface")));
            }
        }
        Ok(())
    }

    /// Nearest surface hit along `origin + t * dir`.
    fn cast(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize, Vector3<f64>)> {
        let mut best: Option<(f64, usize, Vector3<f64>)> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            if let Some((t, n)) = s.shape.intersect(origin, dir) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, i, n));
                }
            }
        }
        best
    }

    /// Whether the open segment from `from` to `to` hits any surface.
    fn segment_blocked(&self, from: &Point3<f64>, to: &Point3<f64>) -> bool {
        let dir = to - from;
        self.surfaces
            .iter()
            .filter_map(|s| s.shape.intersect(from, &dir))
            .any(|(t, _)| t < 1.0 - SHADOW_EPS)
    }

    fn shade(&self, surface: usize, p: &Point3<f64>, normal: &Vector3<f64>) -> f64 {
        let albedo = self.surfaces[surface].texture.albedo(p);
        albedo * (self.ambient + (1.0 - self.ambient) * normal.dot(&self.light_dir).abs())
    }

    /// Labels a world point seen from one view against camera `other`.
    pub fn covisibility(&self, p: &Point3<f64>, other: usize) -> Covisibility {
        let cam = &self.cameras[other];
        match cam.project(p) {
            Some((x, y, _)) if cam.contains(x, y) => {
                if self.segment_blocked(&cam.center(), p) {
                    Covisibility::Occluded
                } else {
                    Covisibility::Visible
                }
            }
            _ => Covisibility::OutOfView,
        }
    }
}

/// Ray-casts view `view`: shaded image with its lighting and noise applied,
/// exact camera-frame depth (0 where nothing is hit) and co-visibility labels.
pub fn render(scene: &Scene, view: usize) -> Result<Rendering> {
    scene.validate()?;
    let cam = scene
        .cameras
        .get(view)
        .ok_or_else(|| Error::InvalidConfig(format!("view {view} out of range")))?;
    let (w, h) = (cam.width(), cam.height());
    let origin = cam.center();
    let to_world: Matrix3<f64> = cam.rotation().transpose() * cam.intrinsics_inverse();
    let others: Vec<usize> = (0..scene.cameras.len()).filter(|&j| j != view).collect();

    struct Px {
        shade: f64,
        depth: f64,
        labels: Vec<Covisibility>,
    }
    let pixels: Vec<Px> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (x, y) = ((p % w) as f64, (p / w) as f64);
            // Camera-frame z of this direction is 1, so the ray parameter is the depth.
            let dir = to_world * Vector3::new(x, y, 1.0);
            match scene.cast(&origin, &dir) {
                Some((t, s, n)) => {
                    let hit = origin + dir * t;
                    Px {
                        shade: scene.shade(s, &hit, &n),
                        depth: t,
                        labels: others.iter().map(|&j| scene.covisibility(&hit, j)).collect(),
                    }
                }
                None => Px {
                    shade: 0.0,
                    depth: 0.0,
                    labels: vec![Covisibility::OutOfView; others.len()],
                },
            }
        })
        .collect();

    let light = scene.lights[view];
    let mut values: Vec<f64> = pixels.iter().map(|p| light.gain * p.shade + light.offset).collect();
    if scene.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(scene.seed ^ mix(view as u64 + 1)));
        let normal = Normal::new(0.0, scene.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for v in &mut values {
            *v += normal.sample(&mut rng);
        }
    }
    values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    let covisibility = others
        .iter()
        .enumerate()
        .map(|(k, &j)| CovisibilityMap {
            other: j,
            width: w,
            height: h,
            labels: pixels.iter().map(|p| p.labels[k]).collect(),
        })
        .collect();
    Ok(Rendering {
        image: Image::new(w, h, 1, values)?,
        depth: DepthMap::new(w, h, pixels.iter().map(|p| p.depth).collect())?,
        covisibility,
    })
}

/// Default image size of the ablation scenes.
pub const DEFAULT_SIZE: (usize, usize) = (128, 96);
/// Focal length at the default width.
pub const DEFAULT_FOCAL: f64 = 240.0;
pub const DEPTH_RANGE: (f64, f64) = (6.0, 16.0);
/// Depth of the main plane along the reference optical axis.
pub const PLANE_DEPTH: f64 = 10.0;
/// Neighbour cameras as (triangulation angle, azimuth) in degrees.
pub const RING: [(f64, f64); 6] = [(10.0, 0.0), (7.0, 60.0), (13.0, 120.0), (5.0, 180.0), (16.0, 240.0), (9.0, 300.0)];
/// Neighbour cameras that get an occluder in the occlusion scene.
pub const OCCLUDED_VIEWS: [usize; 3] = [1, 3, 5];
/// Neighbour cameras zoom out slightly so that they cover the whole reference footprint.
const VIEW_FOCAL_SCALE: f64 = 0.8;

fn ring_cameras(width: usize, height: usize) -> Result<Vec<Camera>> {
    let f = DEFAULT_FOCAL * width as f64 / DEFAULT_SIZE.0 as f64;
    let principal = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let target = Point3::new(0.0, 0.0, PLANE_DEPTH);
    let mut cams = vec![Camera::from_pose(
        f,
        principal,
        Matrix3::identity(),
        Vector3::zeros(),
        DEPTH_RANGE,
        (width, height),
    )?];
    for (theta, phi) in RING {
        let r = PLANE_DEPTH * theta.to_radians().tan();
        let eye = Point3::new(r * phi.to_radians().cos(), r * phi.to_radians().sin(), 0.0);
        let (rot, t) = look_at(&eye, &target);
        cams.push(Camera::from_pose(
            f * VIEW_FOCAL_SCALE,
            principal,
            rot,
            t,
            DEPTH_RANGE,
            (width, height),
        )?);
    }
    Ok(cams)
}

fn noise_texture(seed: u64, salt: u64) -> Texture {
    Texture::Noise {
        seed: mix(seed ^ salt),
        frequency: 4.0,
        octaves: 2,
    }
}

/// Box between `z_near` and `z_far` that blocks every ray from `eye` to the
/// reference-plane region seen by reference pixels `[x0, x1] × [y0, y1]`.
fn occluder(cam_ref: &Camera, eye: &Point3<f64>, rect: (f64, f64, f64, f64), z_near: f64, z_far: f64) -> Shape {
    let (x0, x1, y0, y1) = rect;
    let mut min = Point3::new(f64::INFINITY, f64::INFINITY, z_near);
    let mut max = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, z_far);
    for (x, y) in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)] {
        let target = cam_ref.backproject(x, y, PLANE_DEPTH);
        for z in [z_near, z_far] {
            let s = (z - eye.z) / (target.z - eye.z);
            let q = eye + (target - eye) * s;
            min.x = min.x.min(q.x);
            min.y = min.y.min(q.y);
            max.x = max.x.max(q.x);
            max.y = max.y.max(q.y);
        }
    }
    Shape::Slab { min, max }
}

/// Canonical 7-camera scene at the default 128×96 resolution.
pub fn make_ablation_scene(kind: SceneKind, seed: u64) -> Result<Scene> {
    make_ablation_scene_sized(kind, seed, DEFAULT_SIZE.0, DEFAULT_SIZE.1)
}

/// [`make_ablation_scene`] at another resolution; the focal length scales
/// with the width so the field of view is unchanged.
pub fn make_ablation_scene_sized(kind: SceneKind, seed: u64, width: usize, height: usize) -> Result<Scene> {
    if width < 8 || height < 8 {
        return Err(Error::InvalidConfig(format!("scene size {width}x{height} is too small")));
    }
    let cameras = ring_cameras(width, height)?;
    let plane = Shape::Plane {
        point: Point3::new(0.0, 0.0, PLANE_DEPTH),
        normal: Vector3::new(0.0, 0.0, -1.0),
    };
    let mut surfaces = vec![Surface {
        shape: plane,
        texture: noise_texture(seed, 1),
    }];
    let mut lights = vec![Lighting::default(); cameras.len()];
    let mut noise_sigma = 0.0;
    match kind {
        SceneKind::TexturedPlane => {}
        SceneKind::LightingShift => {
            for (i, l) in lights.iter_mut().enumerate().skip(1) {
                l.offset = if i % 2 == 1 { 0.1 } else { -0.1 };
            }
            noise_sigma = 0.005;
        }
        SceneKind::Occlusion => {
            let (w, h) = (width as f64, height as f64);
            let rect = (0.2 * w, 0.8 * w, 0.2 * h, 0.8 * h);
            for &v in &OCCLUDED_VIEWS {
                surfaces.push(Surface {
                    shape: occluder(&cameras[0], &cameras[v].center(), rect, 1.0, 1.2),
                    texture: noise_texture(seed, 100 + v as u64),
                });
            }
            noise_sigma = 0.015;
        }
        SceneKind::TexturelessPatch => {
            let normal = Vector3::new(0.0, 0.3, -1.0).normalize();
            let center = Point3::new(0.0, 0.0, PLANE_DEPTH);
            surfaces[0] = Surface {
                shape: Shape::Plane { point: center, normal },
                texture: Texture::Patch {
                    center,
                    radius: 1.0,
                    inner: Box::new(Texture::Constant(0.5)),
                    outer: Box::new(noise_texture(seed, 1)),
                },
            };
        }
    }
    Ok(Scene {
        surfaces,
        cameras,
        lights,
        light_dir: Vector3::new(0.3, -0.4, -1.0).normalize(),
        ambient: 0.3,
        noise_sigma,
        seed,
    })
}
