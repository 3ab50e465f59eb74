//! Plane-sweep depth estimation: a cost volume over fronto-parallel depth
//! hypotheses, soft-argmin depth extraction, probability-mass confidence and
//! optional gradient-descent refinement of the resulting depth map.

use std::str::FromStr;

use nalgebra::Point3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{apply_homography, homography_for_depth, Camera};
pub use crate::imaging::DepthMap;
use crate::imaging::{image_gradient, GradientImage, Image, ValidityMask, View};
use crate::loss::photometric::{first_order_map_with, naive_map, select_smallest};
use crate::loss::total::{evaluate, gradient_from};
use crate::loss::{LossConfig, LossMap};

/// Cost assigned to cells that no view observes.
pub const NO_VIEW_COST: f64 = 1e9;

/// Number of hypotheses whose probabilities make up the confidence.
pub const CONFIDENCE_NEIGHBOURS: usize = 4;

/// How per-view costs are combined at a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Mean of the K smallest valid per-view costs.
    TopK,
    /// Variance of the per-pixel features over the reference and valid views.
    Variance,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topk" => Ok(Self::TopK),
            "variance" => Ok(Self::Variance),
            other => Err(Error::InvalidConfig(format!("unknown aggregation '{other}'"))),
        }
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::TopK => "topk",
            Self::Variance => "variance",
        })
    }
}

/// Per-view matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchingCost {
    /// Huber intensity difference plus image-gradient differences.
    FirstOrder,
    /// Absolute intensity difference.
    Naive,
}

impl FromStr for MatchingCost {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-order" | "first_order" => Ok(Self::FirstOrder),
            "naive" => Ok(Self::Naive),
            other => Err(Error::InvalidConfig(format!("unknown matching cost '{other}'"))),
        }
    }
}

impl std::fmt::Display for MatchingCost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::FirstOrder => "first-order",
            Self::Naive => "naive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub num_hypotheses: usize,
    pub aggregation: Aggregation,
    pub matching_cost: MatchingCost,
    /// Side of the square window over which per-view costs are averaged.
    pub window: usize,
    /// Soft-argmin temperature; `None` picks [`default_temperature`].
    pub temperature: Option<f64>,
    pub confidence_threshold: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            num_hypotheses: 128,
            aggregation: Aggregation::TopK,
            matching_cost: MatchingCost::FirstOrder,
            window: 1,
            temperature: None,
            confidence_threshold: 0.8,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_hypotheses < 2 {
            return Err(Error::InvalidConfig("need at least 2 depth hypotheses".into()));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::InvalidConfig("the matching window must be odd".into()));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!("temperature must be positive, got {t}")));
            }
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::InvalidConfig("confidence threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Matching costs per pixel and depth hypothesis, stored pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    depths: Vec<f64>,
    cost: Vec<f64>,
}

fn check_depths(depths: &[f64]) -> Result<()> {
    if depths.len() < 2 {
        return Err(Error::InvalidConfig("need at least 2 depth hypotheses".into()));
    }
    if depths.iter().any(|d| !(d.is_finite() && *d > 0.0)) || depths.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidConfig("depth hypotheses must be positive and strictly increasing".into()));
    }
    Ok(())
}

impl CostVolume {
    /// `cost[p * D + d]` is the cost of hypothesis `d` at pixel `p = y * width + x`.
    pub fn new(width: usize, height: usize, depths: Vec<f64>, cost: Vec<f64>) -> Result<Self> {
        check_depths(&depths)?;
        if cost.len() != width * height * depths.len() {
            return Err(Error::ShapeMismatch(format!(
                "cost volume needs {} entries, got {}",
                width * height * depths.len(),
                cost.len()
            )));
        }
        if cost.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidConfig("costs must be finite and non-negative".into()));
        }
        Ok(Self {
            width,
            height,
            depths,
            cost,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn num_depths(&self) -> usize {
        self.depths.len()
    }

    pub fn cost(&self, x: usize, y: usize, d: usize) -> f64 {
        self.cost[(y * self.width + x) * self.depths.len() + d]
    }

    pub fn pixel_costs(&self, pixel: usize) -> &[f64] {
        let n = self.depths.len();
        &self.cost[pixel * n..(pixel + 1) * n]
    }

    /// Hypothesis index with the lowest cost per pixel (lowest index on ties),
    /// or `None` where every cell is unobserved.
    pub fn argmin(&self) -> Vec<Option<usize>> {
        (0..self.width * self.height)
            .map(|p| {
                let c = self.pixel_costs(p);
                let best = (0..c.len()).min_by(|&a, &b| c[a].total_cmp(&c[b]).then(a.cmp(&b)))?;
                (c[best] < NO_VIEW_COST).then_some(best)
            })
            .collect()
    }

    /// Depth of the per-pixel [`CostVolume::argmin`].
    pub fn hard_argmin_depth(&self) -> DepthMap {
        let data = self
            .argmin()
            .into_iter()
            .map(|i| i.map_or(0.0, |i| self.depths[i]))
            .collect();
        DepthMap::from_vec(self.width, self.height, data)
    }
}

/// Per-pixel probability distributions over the depth hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    width: usize,
    height: usize,
    depths: Vec<f64>,
    prob: Vec<f64>,
}

impl ProbabilityVolume {
    /// Pixel-major like [`CostVolume`]. Each pixel must sum to 1 within 1e-6 or
    /// be all zero (no estimate).
    pub fn new(width: usize, height: usize, depths: Vec<f64>, prob: Vec<f64>) -> Result<Self> {
        check_depths(&depths)?;
        let n = depths.len();
        if prob.len() != width * height * n {
            return Err(Error::ShapeMismatch("probability volume has the wrong size".into()));
        }
        for px in prob.chunks(n) {
            let s: f64 = px.iter().sum();
            if px.iter().any(|p| !(*p >= 0.0 && p.is_finite())) || (s != 0.0 && (s - 1.0).abs() > 1e-6) {
                return Err(Error::InvalidConfig("probabilities must be normalized per pixel".into()));
            }
        }
        Ok(Self {
            width,
            height,
            depths,
            prob,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn pixel_probs(&self, pixel: usize) -> &[f64] {
        let n = self.depths.len();
        &self.prob[pixel * n..(pixel + 1) * n]
    }
}

/// Per-pixel confidence in `[0, 1]` and the threshold it is filtered at.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
    threshold: f64,
}

impl ConfidenceMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>, threshold: f64) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch("confidence map has the wrong size".into()));
        }
        if data.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidConfig("confidence must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            data,
            threshold,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn passes(&self, x: usize, y: usize) -> bool {
        self.get(x, y) >= self.threshold
    }

    pub fn filtered_count(&self) -> usize {
        self.data.iter().filter(|&&c| c < self.threshold).count()
    }

    /// Copy of `depth` with filtered pixels invalidated.
    pub fn apply(&self, depth: &DepthMap) -> DepthMap {
        let data = depth
            .data()
            .iter()
            .zip(&self.data)
            .map(|(&d, &c)| if c >= self.threshold { d } else { 0.0 })
            .collect();
        DepthMap::from_vec(depth.width(), depth.height(), data)
    }
}

/// Ranked neighbour views for one reference camera.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewSelection {
    pub views: Vec<usize>,
    /// Set when fewer than the requested number of views were available.
    pub truncated: bool,
}

/// Default triangulation angle the view ranking aims for, in degrees.
pub const TARGET_ANGLE_DEG: f64 = 10.0;

/// Ranks the other cameras by how close their triangulation angle at the
/// reference's mid-depth principal point is to [`TARGET_ANGLE_DEG`].
pub fn select_views(cameras: &[Camera], reference: usize, n: usize) -> Result<ViewSelection> {
    select_views_with_angle(cameras, reference, n, TARGET_ANGLE_DEG)
}

pub fn select_views_with_angle(
    cameras: &[Camera],
    reference: usize,
    n: usize,
    target_deg: f64,
) -> Result<ViewSelection> {
    let cam = cameras
        .get(reference)
        .ok_or_else(|| Error::InvalidConfig(format!("reference index {reference} out of range")))?;
    let k = cam.intrinsics();
    let mid = 0.5 * (cam.depth_min() + cam.depth_max());
    let anchor = cam.backproject(k[(0, 2)], k[(1, 2)], mid);
    let center = cam.center();
    let angle = |c: &Point3<f64>| {
        let (a, b) = (center - anchor, c - anchor);
        a.angle(&b).to_degrees()
    };
    let mut scored: Vec<(f64, f64, usize)> = cameras
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != reference)
        .map(|(i, c)| {
            let cc = c.center();
            ((angle(&cc) - target_deg).abs(), (cc - center).norm(), i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let truncated = scored.len() < n;
    Ok(ViewSelection {
        views: scored.into_iter().take(n).map(|s| s.2).collect(),
        truncated,
    })
}

/// Warps `img` into the reference frame through the plane `z = depth`.
fn plane_warp(img: &Image, cam_ref: &Camera, cam_view: &Camera, depth: f64) -> (Image, ValidityMask) {
    let (w, h, ch) = (cam_ref.width(), cam_ref.height(), img.channels());
    let hmat = homography_for_depth(cam_ref, cam_view, depth);
    let mut data = vec![0.0; w * h * ch];
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let c = apply_homography(&hmat, x as f64, y as f64, cam_view);
            if c.valid {
                mask[p] = img.sample_into(c.x, c.y, &mut data[p * ch..(p + 1) * ch]);
            }
        }
    }
    (Image::from_raw(w, h, ch, data), ValidityMask::from_vec(w, h, mask))
}

/// Mean of `map` over the valid pixels of a `window`-sized neighbourhood;
/// invalid centres stay invalid.
fn window_mean(map: &LossMap, mask: &ValidityMask, window: usize) -> LossMap {
    if window == 1 {
        return map.clone();
    }
    let (w, h) = (map.width, map.height);
    let r = window / 2;
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let (mut s, mut n) = (0.0, 0usize);
            for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    if mask.get(xx, yy) {
                        s += map.get(xx, yy);
                        n += 1;
                    }
                }
            }
            data[y * w + x] = s / n as f64;
        }
    }
    LossMap {
        width: w,
        height: h,
        data,
    }
}

struct Features<'a> {
    image: &'a Image,
    grad: Option<&'a GradientImage>,
}

impl Features<'_> {
    fn push(&self, p: usize, out: &mut Vec<f64>) {
        let ch = self.image.channels();
        out.extend_from_slice(&self.image.data()[p * ch..(p + 1) * ch]);
        if let Some(g) = self.grad {
            out.extend_from_slice(&g.gx.data()[p * ch..(p + 1) * ch]);
            out.extend_from_slice(&g.gy.data()[p * ch..(p + 1) * ch]);
        }
    }
}

/// Mean over feature dimensions of the population variance across samples.
fn feature_variance(samples: &[f64], dims: usize) -> f64 {
    let n = samples.len() / dims;
    let mut acc = 0.0;
    for d in 0..dims {
        let mean = (0..n).map(|s| samples[s * dims + d]).sum::<f64>() / n as f64;
        acc += (0..n).map(|s| (samples[s * dims + d] - mean).powi(2)).sum::<f64>() / n as f64;
    }
    acc / dims as f64
}

/// Cost map of one hypothesis, `NO_VIEW_COST` where no view is valid.
fn hypothesis_cost(
    ref_img: &Image,
    ref_grad: &GradientImage,
    views: &[View],
    cam_ref: &Camera,
    depth: f64,
    cfg: &LossConfig,
    sweep: &SweepConfig,
) -> Result<Vec<f64>> {
    let (w, h) = (cam_ref.width(), cam_ref.height());
    let k = cfg.top_k.min(views.len());
    let mut warped = Vec::with_capacity(views.len());
    for v in views {
        let (img, mask) = plane_warp(&v.image, cam_ref, &v.camera, depth);
        let grad = match sweep.matching_cost {
            MatchingCost::FirstOrder => Some(image_gradient(&img)?),
            MatchingCost::Naive => None,
        };
        warped.push((img, mask, grad));
    }
    let mut out = vec![NO_VIEW_COST; w * h];
    match sweep.aggregation {
        Aggregation::TopK => {
            let maps: Vec<LossMap> = warped
                .iter()
                .map(|(img, mask, grad)| {
                    let map = match grad {
                        Some(g) => first_order_map_with(ref_img, ref_grad, img, g, mask, cfg.huber_delta),
                        None => naive_map(ref_img, img, mask),
                    };
                    window_mean(&map, mask, sweep.window)
                })
                .collect();
            let mut entries = Vec::with_capacity(views.len());
            let mut picked = Vec::with_capacity(views.len());
            for (p, o) in out.iter_mut().enumerate() {
                entries.clear();
                entries.extend(maps.iter().zip(&warped).map(|(m, (_, mask, _))| (m.data[p], mask.data()[p])));
                select_smallest(&entries, k, &mut picked);
                if !picked.is_empty() {
                    *o = picked.iter().map(|&v| entries[v].0).sum::<f64>() / picked.len() as f64;
                }
            }
        }
        Aggregation::Variance => {
            let grad_ref = (sweep.matching_cost == MatchingCost::FirstOrder).then_some(ref_grad);
            let ref_feat = Features { image: ref_img, grad: grad_ref };
            let dims = ref_img.channels() * if grad_ref.is_some() { 3 } else { 1 };
            let mut samples = Vec::new();
            let mut raw = vec![0.0; w * h];
            let mut any = vec![false; w * h];
            for p in 0..w * h {
                samples.clear();
                ref_feat.push(p, &mut samples);
                for (img, mask, grad) in &warped {
                    if mask.data()[p] {
                        Features { image: img, grad: grad.as_ref() }.push(p, &mut samples);
                    }
                }
                if samples.len() > dims {
                    raw[p] = feature_variance(&samples, dims);
                    any[p] = true;
                }
            }
            let mask = ValidityMask::from_vec(w, h, any);
            let map = window_mean(&LossMap { width: w, height: h, data: raw }, &mask, sweep.window);
            for (p, o) in out.iter_mut().enumerate() {
                if mask.data()[p] {
                    *o = map.data[p];
                }
            }
        }
    }
    Ok(out)
}

/// Sweeps fronto-parallel planes at `hypotheses` through the first
/// `cfg.num_views` views and aggregates per-view matching costs per pixel.
pub fn build_cost_volume(
    ref_img: &Image,
    views: &[View],
    cam_ref: &Camera,
    hypotheses: &[f64],
    cfg: &LossConfig,
    sweep: &SweepConfig,
) -> Result<CostVolume> {
    cfg.validate()?;
    check_depths(hypotheses)?;
    if views.is_empty() {
        return Err(Error::InvalidConfig("the sweep needs at least one view".into()));
    }
    if sweep.window == 0 || sweep.window % 2 == 0 {
        return Err(Error::InvalidConfig("the matching window must be odd".into()));
    }
    if ref_img.width() != cam_ref.width() || ref_img.height() != cam_ref.height() {
        return Err(Error::ShapeMismatch("reference image does not match its camera".into()));
    }
    for v in views {
        if v.image.width() != v.camera.width()
            || v.image.height() != v.camera.height()
            || v.image.channels() != ref_img.channels()
        {
            return Err(Error::ShapeMismatch("view image does not match its camera".into()));
        }
    }
    let views = &views[..cfg.num_views.min(views.len())];
    let ref_grad = image_gradient(ref_img)?;
    let slices: Vec<Vec<f64>> = hypotheses
        .par_iter()
        .map(|&d| hypothesis_cost(ref_img, &ref_grad, views, cam_ref, d, cfg, sweep))
        .collect::<Result<_>>()?;
    let n = hypotheses.len();
    let (w, h) = (cam_ref.width(), cam_ref.height());
    let mut cost = vec![0.0; w * h * n];
    for (d, slice) in slices.iter().enumerate() {
        for (p, c) in slice.iter().enumerate() {
            cost[p * n + d] = *c;
        }
    }
    CostVolume::new(w, h, hypotheses.to_vec(), cost)
}

/// Scale applied to the median observed cost to obtain the default
/// soft-argmin temperature.
pub const DEFAULT_TEMPERATURE_FRACTION: f64 = 0.02;

/// Data-driven temperature: a fixed fraction of the median positive observed
/// cost, or 1 when the volume holds no positive cost.
pub fn default_temperature(volume: &CostVolume) -> f64 {
    let mut costs: Vec<f64> = volume.cost.iter().copied().filter(|&c| c > 0.0 && c < NO_VIEW_COST).collect();
    if costs.is_empty() {
        return 1.0;
    }
    let mid = costs.len() / 2;
    let (_, median, _) = costs.select_nth_unstable_by(mid, f64::total_cmp);
    *median * DEFAULT_TEMPERATURE_FRACTION
}

/// Expected depth under `p_d ∝ exp(-cost_d / temperature)`. Unobserved cells
/// get zero probability; pixels without any observed cell are invalid.
pub fn soft_argmin_depth(volume: &CostVolume, temperature: f64) -> Result<(DepthMap, ProbabilityVolume)> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {temperature}")));
    }
    let n = volume.num_depths();
    let depths = volume.depths();
    let mut prob = vec![0.0; volume.cost.len()];
    let depth: Vec<f64> = prob
        .par_chunks_mut(n)
        .enumerate()
        .map(|(p, out)| {
            let c = volume.pixel_costs(p);
            let min = c.iter().copied().fold(f64::INFINITY, f64::min);
            if !(min < NO_VIEW_COST) {
                return 0.0;
            }
            let mut total = 0.0;
            for (o, &cost) in out.iter_mut().zip(c) {
                if cost < NO_VIEW_COST {
                    *o = (-(cost - min) / temperature).exp();
                    total += *o;
                }
            }
            let mut d = 0.0;
            for (o, &z) in out.iter_mut().zip(depths) {
                *o /= total;
                d += *o * z;
            }
            d.clamp(depths[0], depths[n - 1])
        })
        .collect();
    Ok((
        DepthMap::from_vec(volume.width(), volume.height(), depth),
        ProbabilityVolume {
            width: volume.width(),
            height: volume.height(),
            depths: depths.to_vec(),
            prob,
        },
    ))
}

/// Indices of the `count` hypotheses nearest `depth`, ties towards the lower index.
pub fn nearest_hypotheses(depths: &[f64], depth: f64, count: usize) -> Vec<usize> {
    let n = depths.len();
    let count = count.min(n);
    // First index whose depth is >= the estimate.
    let split = depths.partition_point(|&d| d < depth);
    let (mut lo, mut hi) = (split, split);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let left = (lo > 0).then(|| depth - depths[lo - 1]);
        let right = (hi < n).then(|| depths[hi] - depth);
        match (left, right) {
            (Some(l), Some(r)) if l <= r => {
                lo -= 1;
                out.push(lo);
            }
            (Some(_), Some(_)) | (None, Some(_)) => {
                out.push(hi);
                hi += 1;
            }
            (Some(_), None) => {
                lo -= 1;
                out.push(lo);
            }
            (None, None) => break,
        }
    }
    out.sort_unstable();
    out
}

/// Probability mass on the [`CONFIDENCE_NEIGHBOURS`] hypotheses nearest each
/// estimated depth. Invalid depths get confidence 0.
pub fn confidence_map(prob: &ProbabilityVolume, depth: &DepthMap, threshold: f64) -> Result<ConfidenceMap> {
    if depth.width() != prob.width || depth.height() != prob.height {
        return Err(Error::ShapeMismatch("depth map does not match the probability volume".into()));
    }
    let data = (0..prob.width * prob.height)
        .map(|p| {
            let d = depth.data()[p];
            if !crate::imaging::is_valid_depth(d) {
                return 0.0;
            }
            let probs = prob.pixel_probs(p);
            let s: f64 = nearest_hypotheses(&prob.depths, d, CONFIDENCE_NEIGHBOURS)
                .into_iter()
                .map(|i| probs[i])
                .sum();
            s.clamp(0.0, 1.0)
        })
        .collect();
    ConfidenceMap::new(prob.width, prob.height, data, threshold)
}

/// Outcome of [`refine_depth_descent`].
#[derive(Debug, Clone)]
pub struct Refinement {
    pub depth: DepthMap,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub accepted_steps: usize,
}

/// Projected gradient descent on the total loss with a backtracking step.
///
/// Each iteration moves valid depths by at most `step_size` (the step is
/// normalized by the largest gradient entry) and clamps them to the reference
/// camera's depth range. A step that does not lower the loss is rejected and
/// the step size halved.
pub fn refine_depth_descent(
    ref_img: &Image,
    cam_ref: &Camera,
    views: &[View],
    initial: &DepthMap,
    cfg: &LossConfig,
    steps: usize,
    step_size: f64,
) -> Result<Refinement> {
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::InvalidConfig("step size must be positive".into()));
    }
    let (lo, hi) = (cam_ref.depth_min(), cam_ref.depth_max());
    let mut depth = initial.clone();
    let (warps, eval) = evaluate(ref_img, cam_ref, views, &depth, cfg)?;
    let initial_loss = eval.breakdown.total;
    let mut current = (initial_loss, gradient_from(ref_img, &depth, cfg, &warps, &eval));
    let mut eta = step_size;
    let mut accepted = 0;
    let min_eta = step_size * 1e-12;
    for _ in 0..steps {
        let gmax = current.1.data.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax == 0.0 || eta < min_eta {
            break;
        }
        let mut trial = depth.clone();
        for (d, g) in trial.data_mut().iter_mut().zip(&current.1.data) {
            if crate::imaging::is_valid_depth(*d) {
                *d = (*d - eta * g / gmax).clamp(lo, hi);
            }
        }
        let (warps, eval) = evaluate(ref_img, cam_ref, views, &trial, cfg)?;
        let loss = eval.breakdown.total;
        if loss < current.0 {
            current = (loss, gradient_from(ref_img, &trial, cfg, &warps, &eval));
            depth = trial;
            accepted += 1;
        } else {
            eta *= 0.5;
        }
    }
    Ok(Refinement {
        depth,
        initial_loss,
        final_loss: current.0,
        accepted_steps: accepted,
    })
}

/// Full per-reference estimate produced by [`estimate_depth`].
#[derive(Debug, Clone)]
pub struct DepthEstimate {
    pub depth: DepthMap,
    pub confidence: ConfidenceMap,
    pub temperature: f64,
}

/// Cost volume, soft-argmin and confidence in one call, using hypotheses
/// spread over the reference camera's depth range.
pub fn estimate_depth(
    ref_img: &Image,
    cam_ref: &Camera,
    views: &[View],
    cfg: &LossConfig,
    sweep: &SweepConfig,
) -> Result<DepthEstimate> {
    sweep.validate()?;
    let hyps = cam_ref.depth_hypotheses(sweep.num_hypotheses);
    let volume = build_cost_volume(ref_img, views, cam_ref, &hyps, cfg, sweep)?;
    let temperature = sweep.temperature.unwrap_or_else(|| default_temperature(&volume));
    let (depth, prob) = soft_argmin_depth(&volume, temperature)?;
    let confidence = confidence_map(&prob, &depth, sweep.confidence_threshold)?;
    Ok(DepthEstimate {
        depth,
        confidence,
        temperature,
    })
}
