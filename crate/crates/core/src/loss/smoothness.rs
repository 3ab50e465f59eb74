use crate::error::{Error, Result};
use crate::imaging::{is_valid_depth, DepthMap, Image};

use super::photometric::sign0;
use super::TermValue;

/// Walks every horizontal and vertical forward-difference pair with valid
/// depth at both ends, yielding `(axis, first, second, edge_weight)`.
fn for_each_pair(depth: &DepthMap, img: &Image, mut f: impl FnMut(usize, usize, usize, f64)) {
    let (w, h) = (depth.width(), depth.height());
    let ch = img.channels() as f64;
    let weight = |a: (usize, usize), b: (usize, usize)| {
        let g: f64 = img
            .pixel(a.0, a.1)
            .iter()
            .zip(img.pixel(b.0, b.1))
            .map(|(p, q)| (q - p).abs())
            .sum();
        (-g / ch).exp()
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !is_valid_depth(depth.data()[i]) {
                continue;
            }
            if x + 1 < w && is_valid_depth(depth.data()[i + 1]) {
                f(0, i, i + 1, weight((x, y), (x + 1, y)));
            }
            if y + 1 < h && is_valid_depth(depth.data()[i + w]) {
                f(1, i, i + w, weight((x, y), (x, y + 1)));
            }
        }
    }
}

/// Edge-aware L1 penalty on forward depth differences, weighted by
/// `exp(-|∇I|)`. The value is the mean horizontal term plus the mean
/// vertical term.
pub fn smoothness_loss(depth: &DepthMap, img: &Image) -> Result<TermValue> {
    if depth.width() != img.width() || depth.height() != img.height() {
        return Err(Error::ShapeMismatch("depth map and image differ in size".into()));
    }
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    let d = depth.data();
    for_each_pair(depth, img, |axis, a, b, w| {
        sums[axis] += (d[b] - d[a]).abs() * w;
        counts[axis] += 1;
    });
    let count = counts[0] + counts[1];
    if count == 0 {
        return Ok(TermValue::from_sum(0.0, 0));
    }
    let mean: f64 = (0..2)
        .filter(|&a| counts[a] > 0)
        .map(|a| sums[a] / counts[a] as f64)
        .sum();
    Ok(TermValue {
        sum: sums[0] + sums[1],
        mean,
        count,
        no_signal: false,
    })
}

/// Adds `scale * ∂L_smooth/∂D` into `grad`.
pub(crate) fn smoothness_gradient(depth: &DepthMap, img: &Image, scale: f64, grad: &mut [f64]) {
    let mut counts = [0usize; 2];
    for_each_pair(depth, img, |axis, _, _, _| counts[axis] += 1);
    let d = depth.data();
    for_each_pair(depth, img, |axis, a, b, w| {
        let g = scale * sign0(d[b] - d[a]) * w / counts[axis] as f64;
        grad[b] += g;
        grad[a] -= g;
    });
}
