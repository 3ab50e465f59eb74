use crate::error::{Error, Result};
use crate::imaging::{image_gradient, GradientImage, Image, ValidityMask};

use super::{LossConfig, LossMap, LossVolume, SelectionTensor, TermValue};

/// Residuals this close to zero are treated as exactly zero by the
/// subgradient of `|·|`.
pub(crate) const KINK_EPS: f64 = 1e-12;

/// Huber penalty: `r²/(2δ)` inside `[-δ, δ]`, `|r| - δ/2` outside.
#[inline]
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        r * r / (2.0 * delta)
    } else {
        a - 0.5 * delta
    }
}

#[inline]
pub(crate) fn huber_derivative(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r / delta
    } else {
        sign0(r)
    }
}

#[inline]
pub(crate) fn sign0(r: f64) -> f64 {
    if r.abs() <= KINK_EPS {
        0.0
    } else {
        r.signum()
    }
}

fn check_pair(src: &Image, warped: &Image, mask: &ValidityMask) -> Result<()> {
    if !src.same_shape(warped) {
        return Err(Error::ShapeMismatch(format!(
            "source {}x{}x{} vs warped {}x{}x{}",
            src.width(),
            src.height(),
            src.channels(),
            warped.width(),
            warped.height(),
            warped.channels()
        )));
    }
    if mask.width() != src.width() || mask.height() != src.height() {
        return Err(Error::ShapeMismatch("mask does not match the image".into()));
    }
    Ok(())
}

/// Masked mean absolute intensity difference over all valid pixel-view pairs.
pub fn naive_photometric_loss(src: &Image, warped: &[(Image, ValidityMask)]) -> Result<TermValue> {
    let mut sum = 0.0;
    let mut count = 0;
    for (img, mask) in warped {
        check_pair(src, img, mask)?;
        let map = naive_map(src, img, mask);
        for (p, v) in map.data.iter().enumerate() {
            if mask.data()[p] {
                sum += v;
                count += 1;
            }
        }
    }
    Ok(TermValue::from_sum(sum, count))
}

/// Per-pixel channel-mean `|I_s - Î|`, zero where the mask is invalid.
pub(crate) fn naive_map(src: &Image, warped: &Image, mask: &ValidityMask) -> LossMap {
    let (w, h, ch) = (src.width(), src.height(), src.channels());
    let inv = 1.0 / ch as f64;
    let data = (0..w * h)
        .map(|p| {
            if !mask.data()[p] {
                return 0.0;
            }
            let (a, b) = (&src.data()[p * ch..(p + 1) * ch], &warped.data()[p * ch..(p + 1) * ch]);
            a.iter().zip(b).map(|(s, t)| (s - t).abs()).sum::<f64>() * inv
        })
        .collect();
    LossMap {
        width: w,
        height: h,
        data,
    }
}

/// First-order consistency map: Huber on the intensity difference plus the
/// absolute differences of x and y image gradients, multiplied by the mask.
pub fn first_order_loss_map(
    img_src: &Image,
    warped_img: &Image,
    mask: &ValidityMask,
    cfg: &LossConfig,
) -> Result<LossMap> {
    check_pair(img_src, warped_img, mask)?;
    let gs = image_gradient(img_src)?;
    let gw = image_gradient(warped_img)?;
    Ok(first_order_map_with(img_src, &gs, warped_img, &gw, mask, cfg.huber_delta))
}

pub(crate) fn first_order_map_with(
    src: &Image,
    src_grad: &GradientImage,
    warped: &Image,
    warped_grad: &GradientImage,
    mask: &ValidityMask,
    delta: f64,
) -> LossMap {
    let (w, h, ch) = (src.width(), src.height(), src.channels());
    let inv = 1.0 / ch as f64;
    let data = (0..w * h)
        .map(|p| {
            if !mask.data()[p] {
                return 0.0;
            }
            let mut acc = 0.0;
            for c in 0..ch {
                let i = p * ch + c;
                acc += huber(src.data()[i] - warped.data()[i], delta);
                acc += (src_grad.gx.data()[i] - warped_grad.gx.data()[i]).abs();
                acc += (src_grad.gy.data()[i] - warped_grad.gy.data()[i]).abs();
            }
            acc * inv
        })
        .collect();
    LossMap {
        width: w,
        height: h,
        data,
    }
}

/// Outcome of the per-pixel top-K aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKResult {
    /// Sum over pixels of the K smallest valid losses.
    pub sum: f64,
    /// `sum` divided by the number of selected entries.
    pub mean: f64,
    /// Number of selected (pixel, view) entries.
    pub selected: usize,
    /// Pixels with at least one valid view.
    pub pixels_with_signal: usize,
    pub selection: SelectionTensor,
}

impl TopKResult {
    pub fn term(&self) -> TermValue {
        TermValue::from_sum(self.sum, self.selected)
    }
}

/// Indices of the `k` smallest valid entries at one pixel, ties broken by the
/// lower view index.
#[inline]
pub(crate) fn select_smallest(values: &[(f64, bool)], k: usize, scratch: &mut Vec<usize>) {
    scratch.clear();
    scratch.extend((0..values.len()).filter(|&m| values[m].1));
    scratch.sort_by(|&a, &b| values[a].0.total_cmp(&values[b].0).then(a.cmp(&b)));
    scratch.truncate(k);
}

/// For every pixel, sums the `k` smallest losses among its valid views (all
/// valid views when fewer than `k` exist).
pub fn robust_topk_loss(volume: &LossVolume, k: usize) -> Result<TopKResult> {
    let m = volume.views();
    if k == 0 || k > m {
        return Err(Error::InvalidConfig(format!("need 1 <= K <= M, got K = {k}, M = {m}")));
    }
    let n = volume.width() * volume.height();
    let mut selection = vec![false; n * m];
    let mut sum = 0.0;
    let mut selected = 0;
    let mut pixels_with_signal = 0;
    let mut entries = Vec::with_capacity(m);
    let mut picked = Vec::with_capacity(m);
    for p in 0..n {
        entries.clear();
        entries.extend((0..m).map(|v| (volume.loss(p, v), volume.valid(p, v))));
        select_smallest(&entries, k, &mut picked);
        if !picked.is_empty() {
            pixels_with_signal += 1;
        }
        for &v in &picked {
            selection[p * m + v] = true;
            sum += entries[v].0;
        }
        selected += picked.len();
    }
    let mean = if selected > 0 { sum / selected as f64 } else { 0.0 };
    Ok(TopKResult {
        sum,
        mean,
        selected,
        pixels_with_signal,
        selection: SelectionTensor {
            width: volume.width(),
            height: volume.height(),
            views: m,
            data: selection,
        },
    })
}

/// Histogram of top-K selections per view rank. `ranking[r]` is the view
/// index holding rank `r`.
pub fn topk_selection_frequency(selections: &[SelectionTensor], ranking: &[usize]) -> Result<Vec<u64>> {
    let Some(first) = selections.first() else {
        return Ok(vec![0; ranking.len()]);
    };
    let m = first.views;
    if selections.iter().any(|s| s.views != m) {
        return Err(Error::ShapeMismatch("selection tensors disagree on M".into()));
    }
    let mut sorted = ranking.to_vec();
    sorted.sort_unstable();
    if ranking.len() != m || sorted.iter().enumerate().any(|(i, v)| i != *v) {
        return Err(Error::InvalidConfig(format!(
            "ranking must be a permutation of 0..{m}"
        )));
    }
    let mut hist = vec![0u64; m];
    for sel in selections {
        for p in 0..sel.width * sel.height {
            for (rank, &view) in ranking.iter().enumerate() {
                if sel.selected(p, view) {
                    hist[rank] += 1;
                }
            }
        }
    }
    Ok(hist)
}
