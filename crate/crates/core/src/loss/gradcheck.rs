use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::imaging::{gradient_taps, is_valid_depth, DepthMap, DifferentiableWarp, Image, ValidityMask, View};

use super::total::{evaluate, gradient_from, total_loss, Evaluation};
use super::LossConfig;

/// Settings for comparing [`super::loss_gradient`] against central finite
/// differences.
#[derive(Debug, Clone)]
pub struct GradientCheckConfig {
    pub samples: usize,
    /// Finite-difference step in depth units.
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Pixels marked here are never sampled (e.g. occlusion labels).
    pub exclude: Option<ValidityMask>,
    /// Safety factor applied to every first-order perturbation bound.
    pub margin: f64,
}

impl Default for GradientCheckConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            step: 1e-3,
            tolerance: 1e-4,
            seed: 0,
            exclude: None,
            margin: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub x: usize,
    pub y: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// Why a pixel was left out of the finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Exclusion {
    Masked,
    InvalidDepth,
    GridLine,
    HuberKink,
    GradientKink,
    TopKTie,
    SmoothnessKink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    /// Pixels that satisfied every smoothness condition.
    pub eligible: usize,
    /// Excluded pixel counts per reason.
    pub excluded: Vec<(Exclusion, usize)>,
    pub samples: Vec<GradientSample>,
    pub max_relative_error: f64,
    pub passed: bool,
}

pub(crate) fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-15);
    (a - b).abs() / scale
}

/// Whether perturbing `D(x, y)` by up to `bound` keeps every piecewise choice
/// of the loss fixed: sampler cells, validity, Huber branches, `|·|` signs,
/// top-K membership and smoothness kinks.
fn is_smooth_at(
    src: &Image,
    depth: &DepthMap,
    cfg: &LossConfig,
    warps: &[DifferentiableWarp],
    eval: &Evaluation,
    x: usize,
    y: usize,
    bound: f64,
) -> std::result::Result<(), Exclusion> {
    let (w, h, ch) = (src.width(), src.height(), src.channels());
    let p = y * w + x;
    let d = depth.data()[p];
    if !is_valid_depth(d) {
        return Err(Exclusion::InvalidDepth);
    }
    let neighbours = |x: usize, y: usize| {
        let mut out = vec![(x, y)];
        if x > 0 {
            out.push((x - 1, y));
        }
        if x + 1 < w {
            out.push((x + 1, y));
        }
        if y > 0 {
            out.push((x, y - 1));
        }
        if y + 1 < h {
            out.push((x, y + 1));
        }
        out
    };

    // Largest intensity change per view caused by the perturbation.
    let mut change = vec![0.0f64; warps.len()];
    for (view, warp) in warps.iter().enumerate() {
        let c = warp.coords[p];
        if !c.valid {
            continue;
        }
        let (dx, dy) = warp.d_coords_d_depth[p];
        for (v, dv) in [(c.x, dx), (c.y, dy)] {
            if (v - v.round()).abs() <= dv.abs() * bound {
                return Err(Exclusion::GridLine);
            }
        }
        if warp.mask.data()[p] {
            for k in 0..ch {
                change[view] = change[view].max(warp.d_image_d_depth.data()[p * ch + k].abs() * bound);
            }
        }
    }

    // Pixels whose x (y) derivative reads the perturbed pixel.
    let gx_readers: Vec<usize> = (x.saturating_sub(1)..=(x + 1).min(w - 1))
        .filter(|&q| gradient_taps(q, w).iter().any(|t| t.0 == x && t.1 != 0.0))
        .map(|q| y * w + q)
        .collect();
    let gy_readers: Vec<usize> = (y.saturating_sub(1)..=(y + 1).min(h - 1))
        .filter(|&q| gradient_taps(q, h).iter().any(|t| t.0 == y && t.1 != 0.0))
        .map(|q| q * w + x)
        .collect();

    for (view, warp) in warps.iter().enumerate() {
        if !warp.mask.data()[p] {
            continue;
        }
        let c = change[view];
        let wi = warp.image.data();
        let wg = &eval.warped_grads[view];
        for k in 0..ch {
            let i = p * ch + k;
            let r = src.data()[i] - wi[i];
            if (r.abs() - cfg.huber_delta).abs() <= c || r.abs() <= c {
                return Err(Exclusion::HuberKink);
            }
        }
        let kinks = |readers: &[usize], g_src: &Image, g_w: &Image| {
            readers.iter().any(|&q| {
                warp.mask.data()[q] && (0..ch).any(|k| (g_src.data()[q * ch + k] - g_w.data()[q * ch + k]).abs() <= c)
            })
        };
        if kinks(&gx_readers, &eval.src_grad.gx, &wg.gx) || kinks(&gy_readers, &eval.src_grad.gy, &wg.gy) {
            return Err(Exclusion::GradientKink);
        }
    }

    // Each per-view loss at a neighbour moves by at most 3x its view's intensity change.
    let k = eval.breakdown.top_k_used;
    let m = warps.len();
    let loss_change = 3.0 * change.iter().copied().fold(0.0, f64::max);
    let mut entries = Vec::with_capacity(m);
    for (nx, ny) in neighbours(x, y) {
        let q = ny * w + nx;
        entries.clear();
        entries.extend((0..m).filter(|&v| eval.volume.valid(q, v)).map(|v| eval.volume.loss(q, v)));
        if entries.len() <= k {
            continue;
        }
        entries.sort_by(f64::total_cmp);
        if entries[k] - entries[k - 1] <= 2.0 * loss_change {
            return Err(Exclusion::TopKTie);
        }
    }

    for (nx, ny) in neighbours(x, y).into_iter().skip(1) {
        let dn = depth.data()[ny * w + nx];
        if is_valid_depth(dn) && (dn - d).abs() <= bound {
            return Err(Exclusion::SmoothnessKink);
        }
    }
    Ok(())
}

/// Compares the analytic depth gradient with central differences of the
/// total loss at randomly chosen pixels where the loss is locally smooth.
pub fn check_gradients(
    img_src: &Image,
    cam_src: &Camera,
    views: &[View],
    depth: &DepthMap,
    cfg: &LossConfig,
    check: &GradientCheckConfig,
) -> Result<GradientCheckReport> {
    if !(check.step > 0.0) || check.samples == 0 {
        return Err(Error::InvalidConfig("gradient check needs a positive step and sample count".into()));
    }
    let (w, h) = (depth.width(), depth.height());
    if let Some(ex) = &check.exclude {
        if ex.width() != w || ex.height() != h {
            return Err(Error::ShapeMismatch("exclusion mask does not match the depth map".into()));
        }
    }
    let (warps, eval) = evaluate(img_src, cam_src, views, depth, cfg)?;
    let grad = gradient_from(img_src, depth, cfg, &warps, &eval);
    let bound = check.step * check.margin;
    let mut excluded = std::collections::BTreeMap::new();
    let mut eligible = Vec::new();
    for p in 0..w * h {
        let (x, y) = (p % w, p / w);
        let verdict = if check.exclude.as_ref().is_some_and(|ex| ex.get(x, y)) {
            Err(Exclusion::Masked)
        } else {
            is_smooth_at(img_src, depth, cfg, &warps, &eval, x, y, bound)
        };
        match verdict {
            Ok(()) => eligible.push(p),
            Err(reason) => *excluded.entry(reason).or_insert(0) += 1,
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let n = check.samples.min(eligible.len());
    let mut picks: Vec<usize> = sample(&mut rng, eligible.len(), n).into_iter().map(|i| eligible[i]).collect();
    picks.sort_unstable();

    let mut samples = Vec::with_capacity(n);
    let mut probe = depth.clone();
    for p in picks {
        let d = depth.data()[p];
        probe.data_mut()[p] = d + check.step;
        let plus = total_loss(img_src, cam_src, views, &probe, cfg)?.total;
        probe.data_mut()[p] = d - check.step;
        let minus = total_loss(img_src, cam_src, views, &probe, cfg)?.total;
        probe.data_mut()[p] = d;
        let numeric = (plus - minus) / (2.0 * check.step);
        let analytic = grad.data[p];
        samples.push(GradientSample {
            x: p % w,
            y: p / w,
            analytic,
            numeric,
            relative_error: relative_error(analytic, numeric),
        });
    }
    let max_relative_error = samples.iter().map(|s| s.relative_error).fold(0.0, f64::max);
    Ok(GradientCheckReport {
        eligible: eligible.len(),
        excluded: excluded.into_iter().collect(),
        passed: !samples.is_empty() && max_relative_error < check.tolerance,
        samples,
        max_relative_error,
    })
}
