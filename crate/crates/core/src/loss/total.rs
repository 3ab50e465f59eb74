use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::imaging::{
    gradient_taps, image_gradient, inverse_warp_differentiable, DepthMap, DifferentiableWarp,
    GradientImage, Image, ValidityMask, View,
};

use super::photometric::{first_order_map_with, huber_derivative, robust_topk_loss, sign0};
use super::smoothness::{smoothness_gradient, smoothness_loss};
use super::ssim::{ssim_loss, ssim_loss_adjoint};
use super::{LossConfig, LossMap, LossVolume, SelectionTensor, TermValue, TopKResult};

/// Per-term values of the weighted loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// Top-K first-order photometric term, mean over selected entries.
    pub photometric: TermValue,
    pub ssim: TermValue,
    pub smoothness: TermValue,
    /// `alpha * photometric + beta * ssim + gamma * smoothness` (means).
    pub total: f64,
    pub selection: SelectionTensor,
    /// Views (M) and per-pixel selections (K) actually used.
    pub views_used: usize,
    pub top_k_used: usize,
}

impl LossBreakdown {
    /// Flat `key = value` report of every term.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for (name, t) in [
            ("photometric", &self.photometric),
            ("ssim", &self.ssim),
            ("smoothness", &self.smoothness),
        ] {
            out.push_str(&format!(
                "{name}.sum = {}\n{name}.mean = {}\n{name}.valid_count = {}\n{name}.no_signal = {}\n",
                t.sum, t.mean, t.count, t.no_signal
            ));
        }
        out.push_str(&format!(
            "views_used = {}\ntop_k_used = {}\ntotal = {}\n",
            self.views_used, self.top_k_used, self.total
        ));
        out
    }
}

/// Derivative of the total loss with respect to every depth pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthGradient {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Everything computed on the way to the total loss, kept for the gradient.
pub(crate) struct Evaluation {
    pub src_grad: GradientImage,
    pub warped_grads: Vec<GradientImage>,
    pub volume: LossVolume,
    pub topk: TopKResult,
    pub breakdown: LossBreakdown,
    pub ssim_views: usize,
}

fn evaluate_warped(
    src: &Image,
    warped: &[(&Image, &ValidityMask)],
    depth: &DepthMap,
    cfg: &LossConfig,
) -> Result<Evaluation> {
    cfg.validate()?;
    if warped.is_empty() {
        return Err(Error::InvalidConfig("the loss needs at least one view".into()));
    }
    let m = warped.len();
    let k = cfg.top_k.min(m);
    let src_grad = image_gradient(src)?;
    let mut warped_grads = Vec::with_capacity(m);
    let mut maps: Vec<(LossMap, ValidityMask)> = Vec::with_capacity(m);
    for (img, mask) in warped {
        if !img.same_shape(src) || mask.width() != src.width() || mask.height() != src.height() {
            return Err(Error::ShapeMismatch("warped view does not match the source".into()));
        }
        let g = image_gradient(img)?;
        maps.push((
            first_order_map_with(src, &src_grad, img, &g, mask, cfg.huber_delta),
            (*mask).clone(),
        ));
        warped_grads.push(g);
    }
    let volume = LossVolume::from_maps(&maps)?;
    let topk = robust_topk_loss(&volume, k)?;
    let ssim_views = m.min(2);
    let ssim_pairs: Vec<(Image, ValidityMask)> = warped[..ssim_views]
        .iter()
        .map(|(i, v)| ((*i).clone(), (*v).clone()))
        .collect();
    let ssim = ssim_loss(src, &ssim_pairs, cfg)?;
    let smoothness = smoothness_loss(depth, src)?;
    let photometric = topk.term();
    let total = cfg.alpha * photometric.mean + cfg.beta * ssim.mean + cfg.gamma * smoothness.mean;
    let breakdown = LossBreakdown {
        photometric,
        ssim,
        smoothness,
        total,
        selection: topk.selection.clone(),
        views_used: m,
        top_k_used: k,
    };
    Ok(Evaluation {
        src_grad,
        warped_grads,
        volume,
        topk,
        breakdown,
        ssim_views,
    })
}

/// Weighted loss over already warped views (ranked: the first two feed SSIM).
pub fn total_loss_from_warped(
    img_src: &Image,
    warped: &[(Image, ValidityMask)],
    depth: &DepthMap,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let refs: Vec<(&Image, &ValidityMask)> = warped.iter().map(|(i, m)| (i, m)).collect();
    Ok(evaluate_warped(img_src, &refs, depth, cfg)?.breakdown)
}

pub(crate) fn warp_views(
    cam_src: &Camera,
    views: &[View],
    depth: &DepthMap,
    cfg: &LossConfig,
) -> Result<Vec<DifferentiableWarp>> {
    let m = cfg.num_views.min(views.len());
    views[..m]
        .iter()
        .map(|v| inverse_warp_differentiable(depth, &v.image, cam_src, &v.camera))
        .collect()
}

pub(crate) fn evaluate(
    img_src: &Image,
    cam_src: &Camera,
    views: &[View],
    depth: &DepthMap,
    cfg: &LossConfig,
) -> Result<(Vec<DifferentiableWarp>, Evaluation)> {
    let warps = warp_views(cam_src, views, depth, cfg)?;
    let refs: Vec<(&Image, &ValidityMask)> = warps.iter().map(|w| (&w.image, &w.mask)).collect();
    let eval = evaluate_warped(img_src, &refs, depth, cfg)?;
    Ok((warps, eval))
}

/// Warps the first `cfg.num_views` views (in rank order) with `depth` and
/// evaluates the weighted loss.
pub fn total_loss(
    img_src: &Image,
    cam_src: &Camera,
    views: &[View],
    depth: &DepthMap,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    Ok(evaluate(img_src, cam_src, views, depth, cfg)?.1.breakdown)
}

/// Analytic derivative of [`total_loss`] with respect to each depth pixel.
///
/// The top-K selection, the mask and the Huber branch are held fixed, and
/// `|·|` has derivative 0 at 0.
pub fn loss_gradient(
    img_src: &Image,
    cam_src: &Camera,
    views: &[View],
    depth: &DepthMap,
    cfg: &LossConfig,
) -> Result<DepthGradient> {
    let (warps, eval) = evaluate(img_src, cam_src, views, depth, cfg)?;
    Ok(gradient_from(img_src, depth, cfg, &warps, &eval))
}

pub(crate) fn gradient_from(
    src: &Image,
    depth: &DepthMap,
    cfg: &LossConfig,
    warps: &[DifferentiableWarp],
    eval: &Evaluation,
) -> DepthGradient {
    let (w, h, ch) = (src.width(), src.height(), src.channels());
    let inv_ch = 1.0 / ch as f64;
    let m = warps.len();
    let mut adjoints = vec![vec![0.0; w * h * ch]; m];

    if eval.topk.selected > 0 && cfg.alpha != 0.0 {
        let scale = cfg.alpha / eval.topk.selected as f64 * inv_ch;
        let (s, sg) = (src.data(), &eval.src_grad);
        for (view, adj) in adjoints.iter_mut().enumerate() {
            let (wi, wg) = (warps[view].image.data(), &eval.warped_grads[view]);
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    if !eval.topk.selection.selected(p, view) {
                        continue;
                    }
                    for c in 0..ch {
                        let i = p * ch + c;
                        adj[i] -= scale * huber_derivative(s[i] - wi[i], cfg.huber_delta);
                        let qx = -scale * sign0(sg.gx.data()[i] - wg.gx.data()[i]);
                        if qx != 0.0 {
                            for (pos, weight) in gradient_taps(x, w) {
                                adj[(y * w + pos) * ch + c] += qx * weight;
                            }
                        }
                        let qy = -scale * sign0(sg.gy.data()[i] - wg.gy.data()[i]);
                        if qy != 0.0 {
                            for (pos, weight) in gradient_taps(y, h) {
                                adj[(pos * w + x) * ch + c] += qy * weight;
                            }
                        }
                    }
                }
            }
        }
    }

    let ssim = &eval.breakdown.ssim;
    if ssim.count > 0 && cfg.beta != 0.0 {
        let pairs: Vec<(&Image, &ValidityMask)> = warps[..eval.ssim_views]
            .iter()
            .map(|w| (&w.image, &w.mask))
            .collect();
        ssim_loss_adjoint(
            src,
            &pairs,
            cfg,
            cfg.beta / ssim.count as f64,
            &mut adjoints[..eval.ssim_views],
        );
    }

    let mut grad = vec![0.0; w * h];
    for (warp, adj) in warps.iter().zip(&adjoints) {
        let jac = warp.d_image_d_depth.data();
        for (p, g) in grad.iter_mut().enumerate() {
            if !warp.mask.data()[p] {
                continue;
            }
            for c in 0..ch {
                *g += adj[p * ch + c] * jac[p * ch + c];
            }
        }
    }
    if cfg.gamma != 0.0 {
        smoothness_gradient(depth, src, cfg.gamma, &mut grad);
    }
    DepthGradient {
        width: w,
        height: h,
        data: grad,
    }
}
