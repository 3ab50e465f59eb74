//! Pinhole cameras and the pixel warp between two calibrated views.
//!
//! Conventions: pixel centers sit at integer coordinates, extrinsics map world
//! points into the camera frame (`x_cam = R x_world + t`) and depth is the
//! z-coordinate in the camera frame, not the ray length.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};

use crate::error::{Error, Result};

/// Points whose depth in the target frame is at or below this are treated as
/// lying on or behind the camera plane.
pub const MIN_VIEW_DEPTH: f64 = 1e-9;

const ROTATION_TOLERANCE: f64 = 1e-9;

/// A calibrated pinhole camera with its working depth range.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    intrinsics: Matrix3<f64>,
    intrinsics_inv: Matrix3<f64>,
    extrinsics: Matrix4<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    depth_min: f64,
    depth_max: f64,
    width: usize,
    height: usize,
}

impl Camera {
    /// Builds a camera, validating intrinsics, the rigid extrinsics and the depth range.
    pub fn new(
        intrinsics: Matrix3<f64>,
        extrinsics: Matrix4<f64>,
        depth_min: f64,
        depth_max: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let k = &intrinsics;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::InvalidCamera(
                "intrinsics must be upper-triangular with K[2][2] = 1".into(),
            ));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) || k.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera(
                "focal lengths must be positive and finite".into(),
            ));
        }
        if extrinsics.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("extrinsics contain non-finite values".into()));
        }
        let bottom = extrinsics.fixed_view::<1, 4>(3, 0);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return Err(Error::InvalidCamera(
                "extrinsics bottom row must be [0 0 0 1]".into(),
            ));
        }
        let rotation: Matrix3<f64> = extrinsics.fixed_view::<3, 3>(0, 0).into_owned();
        let deviation = (rotation * rotation.transpose() - Matrix3::identity()).amax();
        if deviation > ROTATION_TOLERANCE || rotation.determinant() <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "rotation block is not a proper rotation (|R R^T - I| = {deviation:e})"
            )));
        }
        if !(depth_min > 0.0 && depth_min < depth_max && depth_max.is_finite()) {
            return Err(Error::InvalidCamera(format!(
                "depth range must satisfy 0 < min < max (got {depth_min}, {depth_max})"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera("image size must be non-zero".into()));
        }
        let intrinsics_inv = intrinsics
            .try_inverse()
            .ok_or_else(|| Error::InvalidCamera("intrinsics are singular".into()))?;
        let translation = extrinsics.fixed_view::<3, 1>(0, 3).into_owned();
        Ok(Self {
            intrinsics,
            intrinsics_inv,
            extrinsics,
            rotation,
            translation,
            depth_min,
            depth_max,
            width,
            height,
        })
    }

    /// Pinhole camera with square pixels looking down its own +z axis.
    pub fn from_pose(
        focal: f64,
        principal: (f64, f64),
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        depth_range: (f64, f64),
        size: (usize, usize),
    ) -> Result<Self> {
        let k = Matrix3::new(focal, 0.0, principal.0, 0.0, focal, principal.1, 0.0, 0.0, 1.0);
        let mut t = Matrix4::identity();
        t.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        t.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self::new(k, t, depth_range.0, depth_range.1, size.0, size.1)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn intrinsics_inverse(&self) -> &Matrix3<f64> {
        &self.intrinsics_inv
    }

    /// World-to-camera rigid transform.
    pub fn extrinsics(&self) -> &Matrix4<f64> {
        &self.extrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn depth_min(&self) -> f64 {
        self.depth_min
    }

    pub fn depth_max(&self) -> f64 {
        self.depth_max
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Whether a continuous pixel coordinate lies inside the image.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn camera_to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.transpose() * (p.coords - self.translation))
    }

    /// Back-projects pixel `(x, y)` at camera-frame depth `depth` into world coordinates.
    pub fn backproject(&self, x: f64, y: f64, depth: f64) -> Point3<f64> {
        let ray = self.intrinsics_inv * Vector3::new(x, y, 1.0);
        self.camera_to_world(&Point3::from(ray * depth))
    }

    /// Projects a world point; returns `(x, y, depth)` without bounds checks,
    /// or `None` when the point is at or behind the camera plane.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        let pc = self.world_to_camera(p);
        if pc.z <= MIN_VIEW_DEPTH {
            return None;
        }
        let h = self.intrinsics * pc.coords;
        Some((h.x / h.z, h.y / h.z, pc.z))
    }

    /// `count` hypothesis depths uniformly spaced over `[depth_min, depth_max]`.
    pub fn depth_hypotheses(&self, count: usize) -> Vec<f64> {
        uniform_depths(self.depth_min, self.depth_max, count)
    }
}

/// Uniformly spaced depths including both end points.
pub fn uniform_depths(min: f64, max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * (min + max)],
        _ => {
            let step = (max - min) / (count - 1) as f64;
            (0..count)
                .map(|i| if i == count - 1 { max } else { min + step * i as f64 })
                .collect()
        }
    }
}

/// Continuous pixel coordinate with a validity flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

impl PixelCoord {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, valid: true }
    }

    pub fn invalid(x: f64, y: f64) -> Self {
        Self { x, y, valid: false }
    }
}

/// Inverts a rigid 4×4 transform.
pub fn rigid_inverse(t: &Matrix4<f64>) -> Matrix4<f64> {
    let r = t.fixed_view::<3, 3>(0, 0).transpose();
    let tr = -(r * t.fixed_view::<3, 1>(0, 3));
    let mut out = Matrix4::identity();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    out.fixed_view_mut::<3, 1>(0, 3).copy_from(&tr);
    out
}

/// Transform taking source-camera coordinates to view-camera coordinates.
pub fn relative_transform(cam_src: &Camera, cam_view: &Camera) -> Matrix4<f64> {
    cam_view.extrinsics() * rigid_inverse(cam_src.extrinsics())
}

/// Result of warping one pixel: target coordinate, depth in the target frame
/// and the derivative of the coordinate with respect to source depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpSample {
    pub coord: PixelCoord,
    pub view_depth: f64,
    pub d_coord_d_depth: (f64, f64),
}

/// Precomputed per-pair warp. A source pixel `u` at depth `d` lands at the
/// projective point `p(d) = a·u·d + b` in the view, where
/// `a = K_view R K_src⁻¹` and `b = K_view t`.
#[derive(Debug, Clone)]
pub struct PixelWarp {
    a: Matrix3<f64>,
    b: Vector3<f64>,
    width: usize,
    height: usize,
}

impl PixelWarp {
    pub fn new(cam_src: &Camera, cam_view: &Camera) -> Self {
        let rel = relative_transform(cam_src, cam_view);
        let r = rel.fixed_view::<3, 3>(0, 0).into_owned();
        let t = rel.fixed_view::<3, 1>(0, 3).into_owned();
        Self {
            a: cam_view.intrinsics() * r * cam_src.intrinsics_inverse(),
            b: cam_view.intrinsics() * t,
            width: cam_view.width(),
            height: cam_view.height(),
        }
    }

    fn projective(&self, x: f64, y: f64, depth: f64) -> (Vector3<f64>, Vector3<f64>) {
        let dir = self.a * Vector3::new(x, y, 1.0);
        (dir * depth + self.b, dir)
    }

    fn finish(&self, p: &Vector3<f64>) -> PixelCoord {
        if p.z <= MIN_VIEW_DEPTH {
            return PixelCoord::invalid(f64::NAN, f64::NAN);
        }
        let (x, y) = (p.x / p.z, p.y / p.z);
        let inside = x >= 0.0
            && y >= 0.0
            && x <= (self.width - 1) as f64
            && y <= (self.height - 1) as f64;
        PixelCoord { x, y, valid: inside }
    }

    pub fn apply(&self, x: f64, y: f64, depth: f64) -> WarpSample {
        let (p, dir) = self.projective(x, y, depth);
        let coord = self.finish(&p);
        let z2 = p.z * p.z;
        WarpSample {
            coord,
            view_depth: p.z,
            d_coord_d_depth: (
                (dir.x * p.z - p.x * dir.z) / z2,
                (dir.y * p.z - p.y * dir.z) / z2,
            ),
        }
    }
}

/// Warps a source pixel at the given depth into the view (`û = K T (d K⁻¹ u)`).
///
/// The returned coordinate is flagged invalid when the point falls at or behind
/// the view camera plane or outside the view image.
pub fn warp_pixel(u: PixelCoord, depth: f64, cam_src: &Camera, cam_view: &Camera) -> PixelCoord {
    if !u.valid || !(depth > 0.0) {
        return PixelCoord::invalid(u.x, u.y);
    }
    PixelWarp::new(cam_src, cam_view).apply(u.x, u.y, depth).coord
}

/// Homography induced by the fronto-parallel source plane `z = depth`:
/// `H = K_view (R + t nᵀ / depth) K_src⁻¹` with `n = (0, 0, 1)`.
pub fn homography_for_depth(cam_src: &Camera, cam_view: &Camera, depth: f64) -> Matrix3<f64> {
    let rel = relative_transform(cam_src, cam_view);
    let r = rel.fixed_view::<3, 3>(0, 0).into_owned();
    let t = rel.fixed_view::<3, 1>(0, 3).into_owned();
    let plane = t * Vector3::new(0.0, 0.0, 1.0).transpose() / depth;
    cam_view.intrinsics() * (r + plane) * cam_src.intrinsics_inverse()
}

/// Applies a homography to a pixel and checks the result against the view bounds.
pub fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64, cam_view: &Camera) -> PixelCoord {
    let p = h * Vector3::new(x, y, 1.0);
    if p.z <= MIN_VIEW_DEPTH {
        return PixelCoord::invalid(f64::NAN, f64::NAN);
    }
    let (px, py) = (p.x / p.z, p.y / p.z);
    PixelCoord {
        x: px,
        y: py,
        valid: cam_view.contains(px, py),
    }
}

/// Rotation whose camera looks from `eye` towards `target`, with image `y`
/// pointing along world `+y` as far as possible.
pub fn look_at(eye: &Point3<f64>, target: &Point3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let forward = (target - eye).normalize();
    let down = Vector3::new(0.0, 1.0, 0.0);
    let right = down.cross(&forward).normalize();
    let down_cam = forward.cross(&right);
    let r = Matrix3::from_rows(&[right.transpose(), down_cam.transpose(), forward.transpose()]);
    let t = -(r * eye.coords);
    (r, t)
}
