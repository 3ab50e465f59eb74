//! Scalar-loop reference implementations written directly from the loss and
//! metric definitions, on plain row-major slices.
#![allow(dead_code)]

pub struct Img<'a> {
    pub w: usize,
    pub h: usize,
    pub ch: usize,
    pub data: &'a [f64],
}

impl Img<'_> {
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.w + x) * self.ch + c]
    }
}

pub fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r / delta
    } else {
        r.abs() - 0.5 * delta
    }
}

/// Central difference inside, forward/backward difference on the first/last sample.
fn diff(f: impl Fn(usize) -> f64, i: usize, n: usize) -> f64 {
    if i == 0 {
        f(1) - f(0)
    } else if i == n - 1 {
        f(n - 1) - f(n - 2)
    } else {
        (f(i + 1) - f(i - 1)) / 2.0
    }
}

pub fn grad_x(img: &Img, x: usize, y: usize, c: usize) -> f64 {
    diff(|i| img.at(i, y, c), x, img.w)
}

pub fn grad_y(img: &Img, x: usize, y: usize, c: usize) -> f64 {
    diff(|j| img.at(x, j, c), y, img.h)
}

/// Mean of channel-averaged `|I_s - Î|` over valid pixel-view pairs.
pub fn naive_mean(src: &Img, warped: &[Img], masks: &[&[bool]]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (img, mask) in warped.iter().zip(masks) {
        for y in 0..src.h {
            for x in 0..src.w {
                if !mask[y * src.w + x] {
                    continue;
                }
                let mut acc = 0.0;
                for c in 0..src.ch {
                    acc += (src.at(x, y, c) - img.at(x, y, c)).abs();
                }
                sum += acc / src.ch as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn first_order_map(src: &Img, warped: &Img, mask: &[bool], delta: f64) -> Vec<f64> {
    let mut out = vec![0.0; src.w * src.h];
    for y in 0..src.h {
        for x in 0..src.w {
            if !mask[y * src.w + x] {
                continue;
            }
            let mut acc = 0.0;
            for c in 0..src.ch {
                acc += huber(src.at(x, y, c) - warped.at(x, y, c), delta);
                acc += (grad_x(src, x, y, c) - grad_x(warped, x, y, c)).abs();
                acc += (grad_y(src, x, y, c) - grad_y(warped, x, y, c)).abs();
            }
            out[y * src.w + x] = acc / src.ch as f64;
        }
    }
    out
}

/// Per pixel, the smallest sum over all subsets of `min(k, #valid)` valid
/// views, found by enumerating every subset. Returns (sum, selected count).
/// `loss[v][p]`, `valid[v][p]`.
pub fn topk_brute_force(loss: &[Vec<f64>], valid: &[Vec<bool>], k: usize) -> (f64, usize) {
    let m = loss.len();
    let n = loss[0].len();
    let (mut total, mut count) = (0.0, 0usize);
    for p in 0..n {
        let nvalid = (0..m).filter(|&v| valid[v][p]).count();
        let want = k.min(nvalid);
        if want == 0 {
            continue;
        }
        let mut best = f64::INFINITY;
        for subset in 0u32..(1 << m) {
            if subset.count_ones() as usize != want {
                continue;
            }
            if (0..m).any(|v| subset & (1 << v) != 0 && !valid[v][p]) {
                continue;
            }
            let s: f64 = (0..m).filter(|&v| subset & (1 << v) != 0).map(|v| loss[v][p]).sum();
            best = best.min(s);
        }
        total += best;
        count += want;
    }
    (total, count)
}

/// Textbook SSIM of two equally sized patches.
pub fn ssim_patch(a: &[f64], b: &[f64], c1: f64, c2: f64) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
    let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Mean of `1 - SSIM` over windows fully inside the valid region of each view.
pub fn ssim_mean(src: &Img, warped: &[Img], masks: &[&[bool]], win: usize, c1: f64, c2: f64) -> f64 {
    let r = win / 2;
    let (mut sum, mut n) = (0.0, 0usize);
    for (img, mask) in warped.iter().zip(masks) {
        for y in r..src.h.saturating_sub(r) {
            for x in r..src.w.saturating_sub(r) {
                let mut ok = true;
                for yy in y - r..=y + r {
                    for xx in x - r..=x + r {
                        ok &= mask[yy * src.w + xx];
                    }
                }
                if !ok {
                    continue;
                }
                let mut acc = 0.0;
                for c in 0..src.ch {
                    let mut a = Vec::new();
                    let mut b = Vec::new();
                    for yy in y - r..=y + r {
                        for xx in x - r..=x + r {
                            a.push(src.at(xx, yy, c));
                            b.push(img.at(xx, yy, c));
                        }
                    }
                    acc += 1.0 - ssim_patch(&a, &b, c1, c2);
                }
                sum += acc / src.ch as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean over horizontal pairs plus mean over vertical pairs of
/// `|ΔD| exp(-mean_c |ΔI|)`; pairs with a non-positive depth are skipped.
pub fn smoothness_mean(depth: &[f64], img: &Img) -> f64 {
    let ok = |d: f64| d.is_finite() && d > 0.0;
    let weight = |a: (usize, usize), b: (usize, usize)| {
        let g: f64 = (0..img.ch).map(|c| (img.at(a.0, a.1, c) - img.at(b.0, b.1, c)).abs()).sum();
        (-g / img.ch as f64).exp()
    };
    let (mut sx, mut nx, mut sy, mut ny) = (0.0, 0, 0.0, 0);
    for y in 0..img.h {
        for x in 0..img.w {
            let d = depth[y * img.w + x];
            if !ok(d) {
                continue;
            }
            if x + 1 < img.w && ok(depth[y * img.w + x + 1]) {
                sx += (depth[y * img.w + x + 1] - d).abs() * weight((x, y), (x + 1, y));
                nx += 1;
            }
            if y + 1 < img.h && ok(depth[(y + 1) * img.w + x]) {
                sy += (depth[(y + 1) * img.w + x] - d).abs() * weight((x, y), (x, y + 1));
                ny += 1;
            }
        }
    }
    let mx = if nx > 0 { sx / nx as f64 } else { 0.0 };
    let my = if ny > 0 { sy / ny as f64 } else { 0.0 };
    mx + my
}

pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Exhaustive nearest-neighbour distance from every point of `from` to `to`.
pub fn nn_brute_force(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    from.iter()
        .map(|p| to.iter().map(|q| dist(*p, *q)).fold(f64::INFINITY, f64::min))
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

pub fn percent_within(d: &[f64], t: f64) -> f64 {
    100.0 * d.iter().filter(|&&x| x < t).count() as f64 / d.len() as f64
}

/// (L1 over pixels valid in both maps, then within 1, within 3 and within 3 %
/// as percentages of every valid truth pixel).
pub fn depth_metrics(pred: &[f64], truth: &[f64]) -> (f64, f64, f64, f64) {
    let ok = |d: f64| d.is_finite() && d > 0.0;
    let (mut l1, mut both, mut w1, mut w3, mut wr, mut n) = (0.0, 0, 0, 0, 0, 0);
    for (p, t) in pred.iter().zip(truth) {
        if !ok(*t) {
            continue;
        }
        n += 1;
        if !ok(*p) {
            continue;
        }
        let e = (p - t).abs();
        l1 += e;
        both += 1;
        w1 += (e < 1.0) as usize;
        w3 += (e < 3.0) as usize;
        wr += (e < 0.03 * t) as usize;
    }
    let pct = |k: usize| 100.0 * k as f64 / n as f64;
    (l1 / both as f64, pct(w1), pct(w3), pct(wr))
}
