//! Robust photometric loss stack: naive and first-order photometric terms,
//! per-pixel top-K view aggregation, SSIM and edge-aware depth smoothness,
//! plus the weighted total and its analytic derivative with respect to depth.
//!
//! Every term is normalized as a mean over its valid contributions so that
//! magnitudes do not depend on image size or mask coverage. Color images are
//! handled per channel and averaged over channels.

mod gradcheck;
pub(crate) mod photometric;
mod smoothness;
mod ssim;
pub(crate) mod total;

pub use gradcheck::{check_gradients, Exclusion, GradientCheckConfig, GradientCheckReport, GradientSample};
pub use photometric::{
    first_order_loss_map, huber, naive_photometric_loss, robust_topk_loss,
    topk_selection_frequency, TopKResult,
};
pub use smoothness::smoothness_loss;
pub use ssim::{ssim, ssim_loss};
pub use total::{loss_gradient, total_loss, total_loss_from_warped, DepthGradient, LossBreakdown};

use crate::error::{Error, Result};

/// Weights and hyperparameters of the loss stack.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Weight of the robust photometric term.
    pub alpha: f64,
    /// Weight of the SSIM term.
    pub beta: f64,
    /// Weight of the depth smoothness term.
    pub gamma: f64,
    /// Number of non-reference views entering the loss (M).
    pub num_views: usize,
    /// Views kept per pixel by the top-K aggregation (K).
    pub top_k: usize,
    /// Huber threshold on intensity differences, images in `[0, 1]`.
    pub huber_delta: f64,
    /// Side of the square SSIM pooling window (odd).
    pub ssim_window: usize,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 0.2,
            gamma: 0.0067,
            num_views: 6,
            top_k: 3,
            huber_delta: 0.2,
            ssim_window: 3,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_views == 0 || self.top_k == 0 || self.top_k > self.num_views {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= K <= M, got K = {}, M = {}",
                self.top_k, self.num_views
            )));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {w}")));
            }
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::InvalidConfig("huber_delta must be positive".into()));
        }
        if self.ssim_window == 0 || self.ssim_window % 2 == 0 {
            return Err(Error::InvalidConfig("ssim_window must be odd".into()));
        }
        if !(self.ssim_c1 >= 0.0 && self.ssim_c2 > 0.0) {
            return Err(Error::InvalidConfig("ssim constants must be positive".into()));
        }
        Ok(())
    }
}

/// Aggregate of one loss term over its valid contributions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermValue {
    pub sum: f64,
    /// `sum / count`, or 0 without signal.
    pub mean: f64,
    pub count: usize,
    /// Set when no valid contribution exists; the term then evaluates to 0.
    pub no_signal: bool,
}

impl TermValue {
    pub(crate) fn from_sum(sum: f64, count: usize) -> Self {
        if count == 0 {
            Self {
                sum: 0.0,
                mean: 0.0,
                count: 0,
                no_signal: true,
            }
        } else {
            Self {
                sum,
                mean: sum / count as f64,
                count,
                no_signal: false,
            }
        }
    }
}

/// Single-channel per-pixel loss map.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl LossMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// H×W×M stack of per-view loss maps with their validity.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVolume {
    width: usize,
    height: usize,
    views: usize,
    // pixel-major: index = pixel * views + view
    loss: Vec<f64>,
    valid: Vec<bool>,
}

impl LossVolume {
    /// Builds a volume from pixel-major `loss`/`valid` arrays. Entries with
    /// `valid == false` are forced to zero.
    pub fn new(
        width: usize,
        height: usize,
        views: usize,
        mut loss: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height * views;
        if views == 0 || loss.len() != n || valid.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "loss volume {width}x{height}x{views} needs {n} entries"
            )));
        }
        for (l, v) in loss.iter_mut().zip(&valid) {
            if !(l.is_finite() && *l >= 0.0) {
                return Err(Error::InvalidConfig(format!("loss entries must be finite and >= 0, got {l}")));
            }
            if !v {
                *l = 0.0;
            }
        }
        Ok(Self {
            width,
            height,
            views,
            loss,
            valid,
        })
    }

    /// Stacks per-view maps and masks.
    pub fn from_maps(maps: &[(LossMap, crate::imaging::ValidityMask)]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::ShapeMismatch("loss volume needs at least one view".into()))?;
        let (w, h, m) = (first.0.width, first.0.height, maps.len());
        let mut loss = vec![0.0; w * h * m];
        let mut valid = vec![false; w * h * m];
        for (v, (map, mask)) in maps.iter().enumerate() {
            if map.width != w || map.height != h || mask.width() != w || mask.height() != h {
                return Err(Error::ShapeMismatch("loss maps differ in shape".into()));
            }
            for p in 0..w * h {
                loss[p * m + v] = map.data[p];
                valid[p * m + v] = mask.data()[p];
            }
        }
        Self::new(w, h, m, loss, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn views(&self) -> usize {
        self.views
    }

    #[inline]
    pub fn loss(&self, pixel: usize, view: usize) -> f64 {
        self.loss[pixel * self.views + view]
    }

    #[inline]
    pub fn valid(&self, pixel: usize, view: usize) -> bool {
        self.valid[pixel * self.views + view]
    }

    /// Returns a copy with the view axis permuted: new view `i` is old view `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let m = self.views;
        let mut loss = vec![0.0; self.loss.len()];
        let mut valid = vec![false; self.valid.len()];
        for p in 0..self.width * self.height {
            for (i, &src) in order.iter().enumerate() {
                loss[p * m + i] = self.loss[p * m + src];
                valid[p * m + i] = self.valid[p * m + src];
            }
        }
        Self {
            loss,
            valid,
            ..*self
        }
    }
}

/// Binary H×W×M record of which views the top-K rule selected per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionTensor {
    pub width: usize,
    pub height: usize,
    pub views: usize,
    // pixel-major, like LossVolume
    pub data: Vec<bool>,
}

impl SelectionTensor {
    #[inline]
    pub fn selected(&self, pixel: usize, view: usize) -> bool {
        self.data[pixel * self.views + view]
    }

    pub fn count_at(&self, pixel: usize) -> usize {
        self.data[pixel * self.views..(pixel + 1) * self.views]
            .iter()
            .filter(|s| **s)
            .count()
    }

    pub fn total(&self) -> usize {
        self.data.iter().filter(|s| **s).count()
    }
}
