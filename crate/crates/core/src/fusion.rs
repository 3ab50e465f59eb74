//! Geometric-consistency filtering of per-view depth maps and their fusion
//! into one colored point cloud.

use nalgebra::Point3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::imaging::{is_valid_depth, DepthMap, Image, ValidityMask};
use crate::sweep::ConfidenceMap;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub colors: Vec<[u8; 3]>,
    /// Number of other views that agreed with each point.
    pub support: Vec<u32>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: Point3<f64>, color: [u8; 3], support: u32) {
        self.points.push(point);
        self.colors.push(color);
        self.support.push(support);
    }

    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        let n = points.len();
        Self {
            points,
            colors: vec![[0; 3]; n],
            support: vec![0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    /// Maximum relative depth disagreement.
    pub depth_tolerance: f64,
    /// Maximum reprojection error in pixels.
    pub reprojection_tolerance: f64,
    /// Other views that must agree before a pixel becomes a point.
    pub min_consistent_views: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            depth_tolerance: 0.01,
            reprojection_tolerance: 1.0,
            min_consistent_views: 3,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_tolerance > 0.0 && self.reprojection_tolerance > 0.0) {
            return Err(Error::InvalidConfig("fusion tolerances must be positive".into()));
        }
        if self.min_consistent_views == 0 {
            return Err(Error::InvalidConfig("min_consistent_views must be at least 1".into()));
        }
        Ok(())
    }
}

fn color_at(image: &Image, x: usize, y: usize) -> [u8; 3] {
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let px = image.pixel(x, y);
    if px.len() >= 3 {
        [to_u8(px[0]), to_u8(px[1]), to_u8(px[2])]
    } else {
        [to_u8(px[0]); 3]
    }
}

/// World points of every valid depth pixel, colored from `image`.
pub fn backproject(depth: &DepthMap, cam: &Camera, image: &Image) -> Result<PointCloud> {
    let (w, h) = (depth.width(), depth.height());
    if cam.width() != w || cam.height() != h || image.width() != w || image.height() != h {
        return Err(Error::ShapeMismatch("depth map, camera and image must share a size".into()));
    }
    let mut cloud = PointCloud::default();
    for y in 0..h {
        for x in 0..w {
            let d = depth.get(x, y);
            if is_valid_depth(d) {
                cloud.push(cam.backproject(x as f64, y as f64, d), color_at(image, x, y), 0);
            }
        }
    }
    Ok(cloud)
}

/// Checks one reference pixel against another view. On success returns the
/// view pixel index it matched and that pixel's world point.
fn check_pixel(
    x: usize,
    y: usize,
    d: f64,
    cam_ref: &Camera,
    depth_view: &DepthMap,
    cam_view: &Camera,
    cfg: &FusionConfig,
) -> Option<(usize, Point3<f64>)> {
    let p = cam_ref.backproject(x as f64, y as f64, d);
    let (u, v, _) = cam_view.project(&p)?;
    let (qx, qy) = (u.round(), v.round());
    if !(qx >= 0.0 && qy >= 0.0 && qx < cam_view.width() as f64 && qy < cam_view.height() as f64) {
        return None;
    }
    let (qx, qy) = (qx as usize, qy as usize);
    let dq = depth_view.get(qx, qy);
    if !is_valid_depth(dq) {
        return None;
    }
    let back = cam_view.backproject(qx as f64, qy as f64, dq);
    let (rx, ry, rz) = cam_ref.project(&back)?;
    let reproj = (rx - x as f64).hypot(ry - y as f64);
    let rel = (rz - d).abs() / d;
    (reproj < cfg.reprojection_tolerance && rel < cfg.depth_tolerance).then_some((qy * depth_view.width() + qx, back))
}

/// Marks reference pixels whose depth is confirmed by the view: the view's
/// depth at the nearest pixel of the projection, back-projected and
/// reprojected, lands within the tolerances.
pub fn consistency_check(
    depth_ref: &DepthMap,
    cam_ref: &Camera,
    depth_view: &DepthMap,
    cam_view: &Camera,
    cfg: &FusionConfig,
) -> Result<ValidityMask> {
    cfg.validate()?;
    let (w, h) = (depth_ref.width(), depth_ref.height());
    if cam_ref.width() != w || cam_ref.height() != h {
        return Err(Error::ShapeMismatch("reference depth does not match its camera".into()));
    }
    if cam_view.width() != depth_view.width() || cam_view.height() != depth_view.height() {
        return Err(Error::ShapeMismatch("view depth does not match its camera".into()));
    }
    let data = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let d = depth_ref.get(x, y);
            is_valid_depth(d) && check_pixel(x, y, d, cam_ref, depth_view, cam_view, cfg).is_some()
        })
        .collect();
    ValidityMask::new(w, h, data)
}

/// One calibrated view entering the fusion.
#[derive(Debug, Clone)]
pub struct FusionView {
    pub depth: DepthMap,
    /// Pixels below the confidence threshold are ignored.
    pub confidence: Option<ConfidenceMap>,
    pub camera: Camera,
    pub image: Image,
}

/// Where each pixel went during fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelFate {
    InvalidDepth,
    LowConfidence,
    /// Merged into a point seeded by another pixel.
    Consumed,
    /// Not enough agreeing views.
    Inconsistent,
    /// Seeded a fused point.
    Fused,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FusionStats {
    pub input_pixels: usize,
    pub invalid_depth: usize,
    pub low_confidence: usize,
    pub inconsistent: usize,
    pub consumed: usize,
    pub fused_points: usize,
    /// Agreeing views required per point after capping by the view count.
    pub required_views: usize,
}

impl FusionStats {
    pub fn report(&self) -> String {
        format!(
            "input_pixels = {}\ninvalid_depth = {}\nlow_confidence = {}\ninconsistent = {}\nconsumed = {}\nfused_points = {}\nrequired_views = {}\n",
            self.input_pixels,
            self.invalid_depth,
            self.low_confidence,
            self.inconsistent,
            self.consumed,
            self.fused_points,
            self.required_views
        )
    }
}

#[derive(Debug, Clone)]
pub struct Fusion {
    pub cloud: PointCloud,
    pub stats: FusionStats,
    /// Per view and pixel, what happened to it.
    pub fates: Vec<Vec<PixelFate>>,
    /// Seeding `(view, pixel index)` of every fused point.
    pub seeds: Vec<(usize, usize)>,
}

/// Fuses depth maps into a point cloud.
///
/// Views are processed in input order as references. A usable reference
/// pixel that is not consumed yet becomes a point when at least
/// `min(min_consistent_views, views - 1)` other views confirm it; the point is
/// the mean of the reference point and the confirming points not consumed
/// yet, and every contributing pixel is consumed.
pub fn fuse(views: &[FusionView], cfg: &FusionConfig) -> Result<Fusion> {
    cfg.validate()?;
    for (i, v) in views.iter().enumerate() {
        let (w, h) = (v.depth.width(), v.depth.height());
        let conf_ok = v.confidence.as_ref().is_none_or(|c| c.width() == w && c.height() == h);
        if v.camera.width() != w || v.camera.height() != h || v.image.width() != w || v.image.height() != h || !conf_ok {
            return Err(Error::ShapeMismatch(format!("view {i}: depth, confidence, camera and image sizes differ")));
        }
    }
    let required = cfg.min_consistent_views.min(views.len().saturating_sub(1));
    let mut stats = FusionStats {
        required_views: required,
        ..Default::default()
    };
    let mut fates: Vec<Vec<PixelFate>> = views
        .iter()
        .map(|v| {
            (0..v.depth.data().len())
                .map(|p| {
                    let (x, y) = (p % v.depth.width(), p / v.depth.width());
                    if !is_valid_depth(v.depth.data()[p]) {
                        PixelFate::InvalidDepth
                    } else if v.confidence.as_ref().is_some_and(|c| !c.passes(x, y)) {
                        PixelFate::LowConfidence
                    } else {
                        PixelFate::Inconsistent
                    }
                })
                .collect()
        })
        .collect();
    // Depth maps with filtered pixels removed, used as lookup targets.
    let usable: Vec<DepthMap> = views
        .iter()
        .zip(&fates)
        .map(|(v, f)| {
            let mut d = v.depth.clone();
            for (val, fate) in d.data_mut().iter_mut().zip(f) {
                if *fate != PixelFate::Inconsistent {
                    *val = 0.0;
                }
            }
            d
        })
        .collect();
    let mut consumed: Vec<Vec<bool>> = usable.iter().map(|d| vec![false; d.data().len()]).collect();
    let mut cloud = PointCloud::default();
    let mut seeds = Vec::new();

    for (r, view) in views.iter().enumerate() {
        let (w, h) = (view.depth.width(), view.depth.height());
        let candidates: Vec<Vec<(usize, usize, Point3<f64>)>> = (0..w * h)
            .into_par_iter()
            .map(|p| {
                let d = usable[r].data()[p];
                if !is_valid_depth(d) {
                    return Vec::new();
                }
                let (x, y) = (p % w, p / w);
                (0..views.len())
                    .filter(|&j| j != r)
                    .filter_map(|j| {
                        check_pixel(x, y, d, &view.camera, &usable[j], &views[j].camera, cfg).map(|(q, pt)| (j, q, pt))
                    })
                    .collect()
            })
            .collect();
        for (p, cands) in candidates.into_iter().enumerate() {
            let d = usable[r].data()[p];
            if !is_valid_depth(d) || consumed[r][p] {
                continue;
            }
            if cands.len() < required {
                continue;
            }
            let support = cands.len() as u32;
            let (x, y) = (p % w, p / w);
            let mut sum = view.camera.backproject(x as f64, y as f64, d).coords;
            let mut merged = 1;
            for (j, q, pt) in cands {
                if consumed[j][q] {
                    continue;
                }
                sum += pt.coords;
                merged += 1;
                consumed[j][q] = true;
                fates[j][q] = PixelFate::Consumed;
            }
            consumed[r][p] = true;
            fates[r][p] = PixelFate::Fused;
            cloud.push(Point3::from(sum / merged as f64), color_at(&view.image, x, y), support);
            seeds.push((r, p));
        }
    }

    for f in fates.iter().flatten() {
        stats.input_pixels += 1;
        match f {
            PixelFate::InvalidDepth => stats.invalid_depth += 1,
            PixelFate::LowConfidence => stats.low_confidence += 1,
            PixelFate::Consumed => stats.consumed += 1,
            PixelFate::Inconsistent => stats.inconsistent += 1,
            PixelFate::Fused => stats.fused_points += 1,
        }
    }
    Ok(Fusion {
        cloud,
        stats,
        fates,
        seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn cam(t: Vector3<f64>) -> Camera {
        Camera::from_pose(50.0, (15.5, 11.5), Matrix3::identity(), t, (1.0, 20.0), (32, 24)).unwrap()
    }

    #[test]
    fn principal_pixel_backprojects_on_axis() {
        let c = Camera::from_pose(50.0, (3.0, 2.0), Matrix3::identity(), Vector3::zeros(), (1.0, 20.0), (7, 5)).unwrap();
        let cloud = backproject(&DepthMap::filled(7, 5, 4.0), &c, &Image::filled(7, 5, 1, 0.5)).unwrap();
        assert_eq!(cloud.len(), 35);
        assert!(cloud.points.contains(&Point3::new(0.0, 0.0, 4.0)));
        assert_eq!(cloud.colors[0], [128, 128, 128]);
    }

    #[test]
    fn self_check_is_fully_consistent() {
        let c = cam(Vector3::zeros());
        let d = DepthMap::from_fn(32, 24, |x, y| 5.0 + 0.01 * (x + y) as f64);
        let m = consistency_check(&d, &c, &d, &c, &FusionConfig::default()).unwrap();
        assert_eq!(m.count(), 32 * 24);
    }

    #[test]
    fn single_map_is_pure_backprojection() {
        let c = cam(Vector3::zeros());
        let mut d = DepthMap::filled(32, 24, 5.0);
        d.set(3, 3, 0.0);
        let v = FusionView {
            depth: d,
            confidence: None,
            camera: c,
            image: Image::filled(32, 24, 1, 0.2),
        };
        let cfg = FusionConfig {
            min_consistent_views: 1,
            ..Default::default()
        };
        let f = fuse(&[v], &cfg).unwrap();
        assert_eq!(f.cloud.len(), 32 * 24 - 1);
        assert_eq!(f.stats.invalid_depth, 1);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = FusionConfig {
            depth_tolerance: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
