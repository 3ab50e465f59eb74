use crate::error::{Error, Result};
use crate::imaging::{Image, ValidityMask};

use super::{LossConfig, TermValue};

/// Structural similarity of two equally sized patches, using average-pooled
/// means, (population) variances and covariance.
pub fn ssim(patch_x: &[f64], patch_y: &[f64], c1: f64, c2: f64) -> f64 {
    let s = PatchStats::new(patch_x, patch_y);
    s.ssim(c1, c2)
}

struct PatchStats {
    n: f64,
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

impl PatchStats {
    fn new(x: &[f64], y: &[f64]) -> Self {
        assert_eq!(x.len(), y.len(), "SSIM patches must have the same size");
        let n = x.len() as f64;
        let mu_x = x.iter().sum::<f64>() / n;
        let mu_y = y.iter().sum::<f64>() / n;
        let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            let (dx, dy) = (a - mu_x, b - mu_y);
            var_x += dx * dx;
            var_y += dy * dy;
            cov += dx * dy;
        }
        Self {
            n,
            mu_x,
            mu_y,
            var_x: var_x / n,
            var_y: var_y / n,
            cov: cov / n,
        }
    }

    fn parts(&self, c1: f64, c2: f64) -> (f64, f64, f64, f64) {
        (
            2.0 * self.mu_x * self.mu_y + c1,
            2.0 * self.cov + c2,
            self.mu_x * self.mu_x + self.mu_y * self.mu_y + c1,
            self.var_x + self.var_y + c2,
        )
    }

    fn ssim(&self, c1: f64, c2: f64) -> f64 {
        let (a, b, c, e) = self.parts(c1, c2);
        a * b / (c * e)
    }
}

/// SSIM and its gradient with respect to every sample of `y`.
pub(crate) fn ssim_with_gradient(x: &[f64], y: &[f64], c1: f64, c2: f64, grad_y: &mut [f64]) -> f64 {
    let s = PatchStats::new(x, y);
    let (a, b, c, e) = s.parts(c1, c2);
    let denom = c * e;
    let value = a * b / denom;
    let inv_n = 1.0 / s.n;
    let da = 2.0 * s.mu_x * inv_n;
    let dc = 2.0 * s.mu_y * inv_n;
    for (k, g) in grad_y.iter_mut().enumerate() {
        let db = 2.0 * (x[k] - s.mu_x) * inv_n;
        let de = 2.0 * (y[k] - s.mu_y) * inv_n;
        *g = (da * b + a * db) / denom - value * (dc * e + c * de) / denom;
    }
    value
}

/// Whether the `window`×`window` neighbourhood centered at `(x, y)` lies
/// inside the image and is valid everywhere.
pub(crate) fn window_valid(mask: &ValidityMask, x: usize, y: usize, window: usize) -> bool {
    let r = window / 2;
    if x < r || y < r || x + r >= mask.width() || y + r >= mask.height() {
        return false;
    }
    (y - r..=y + r).all(|yy| (x - r..=x + r).all(|xx| mask.get(xx, yy)))
}

pub(crate) fn gather_window(img: &Image, x: usize, y: usize, window: usize, c: usize, out: &mut Vec<f64>) {
    let r = window / 2;
    out.clear();
    for yy in y - r..=y + r {
        for xx in x - r..=x + r {
            out.push(img.get(xx, yy, c));
        }
    }
}

/// Mean of `1 - SSIM` over every pixel whose pooling window is fully inside the
/// image and fully valid, across all supplied views.
pub fn ssim_loss(img_src: &Image, warped: &[(Image, ValidityMask)], cfg: &LossConfig) -> Result<TermValue> {
    let win = cfg.ssim_window;
    let ch = img_src.channels();
    let mut sum = 0.0;
    let mut count = 0;
    let (mut px, mut py) = (Vec::new(), Vec::new());
    for (img, mask) in warped {
        if !img.same_shape(img_src) || mask.width() != img.width() || mask.height() != img.height() {
            return Err(Error::ShapeMismatch("SSIM inputs differ in shape".into()));
        }
        for y in 0..img.height() {
            for x in 0..img.width() {
                if !window_valid(mask, x, y, win) {
                    continue;
                }
                let mut acc = 0.0;
                for c in 0..ch {
                    gather_window(img_src, x, y, win, c, &mut px);
                    gather_window(img, x, y, win, c, &mut py);
                    acc += 1.0 - ssim(&px, &py, cfg.ssim_c1, cfg.ssim_c2);
                }
                sum += acc / ch as f64;
                count += 1;
            }
        }
    }
    Ok(TermValue::from_sum(sum, count))
}

/// Accumulates `scale * ∂(Σ (1 - SSIM))/∂Î` into per-view adjoint buffers
/// laid out like the warped images.
pub(crate) fn ssim_loss_adjoint(
    img_src: &Image,
    warped: &[(&Image, &ValidityMask)],
    cfg: &LossConfig,
    scale: f64,
    adjoints: &mut [Vec<f64>],
) {
    let win = cfg.ssim_window;
    let r = win / 2;
    let ch = img_src.channels();
    let inv_ch = 1.0 / ch as f64;
    let (mut px, mut py) = (Vec::new(), Vec::new());
    let mut grad = vec![0.0; win * win];
    for ((img, mask), adj) in warped.iter().zip(adjoints.iter_mut()) {
        for y in 0..img.height() {
            for x in 0..img.width() {
                if !window_valid(mask, x, y, win) {
                    continue;
                }
                for c in 0..ch {
                    gather_window(img_src, x, y, win, c, &mut px);
                    gather_window(img, x, y, win, c, &mut py);
                    ssim_with_gradient(&px, &py, cfg.ssim_c1, cfg.ssim_c2, &mut grad);
                    let mut k = 0;
                    for yy in y - r..=y + r {
                        for xx in x - r..=x + r {
                            adj[(yy * img.width() + xx) * ch + c] -= scale * inv_ch * grad[k];
                            k += 1;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const C1: f64 = 1e-4;
    const C2: f64 = 9e-4;

    #[test]
    fn identical_patches_score_one() {
        let p = [0.1, 0.5, 0.3, 0.9, 0.2, 0.4, 0.7, 0.6, 0.8];
        assert_abs_diff_eq!(ssim(&p, &p, C1, C2), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn black_versus_white() {
        let s = ssim(&[0.0; 9], &[1.0; 9], C1, C2);
        assert_abs_diff_eq!(s, C1 / (1.0 + C1), epsilon = 1e-15);
        assert_abs_diff_eq!(s, 9.999e-5, epsilon = 1e-8);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = [0.1, 0.5, 0.3, 0.9, 0.2, 0.4, 0.7, 0.6, 0.8];
        let y = [0.2, 0.4, 0.35, 0.7, 0.1, 0.5, 0.65, 0.55, 0.9];
        let mut g = [0.0; 9];
        ssim_with_gradient(&x, &y, C1, C2, &mut g);
        let h = 1e-6;
        for k in 0..9 {
            let mut yp = y;
            let mut ym = y;
            yp[k] += h;
            ym[k] -= h;
            let fd = (ssim(&x, &yp, C1, C2) - ssim(&x, &ym, C1, C2)) / (2.0 * h);
            assert_abs_diff_eq!(g[k], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn identical_images_and_empty_masks_give_zero() {
        let cfg = LossConfig::default();
        let img = Image::from_fn(6, 6, 1, |x, y, _| ((x * 7 + y * 3) % 5) as f64 / 5.0);
        let same = ssim_loss(&img, &[(img.clone(), ValidityMask::all(6, 6, true))], &cfg).unwrap();
        assert_abs_diff_eq!(same.mean, 0.0, epsilon = 1e-15);
        assert_eq!(same.count, 16);
        let none = ssim_loss(
            &img,
            &[
                (img.clone(), ValidityMask::all(6, 6, false)),
                (img.clone(), ValidityMask::all(6, 6, false)),
            ],
            &cfg,
        )
        .unwrap();
        assert!(none.no_signal);
        assert_eq!(none.mean, 0.0);
    }
}
