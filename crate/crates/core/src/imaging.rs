//! Image containers, finite-difference gradients and the bilinear sampler used
//! by inverse warping.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Camera, PixelCoord, PixelWarp};

/// Row-major float image with 1 or 3 interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("image must be non-empty".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "expected {} values for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite intensity".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("filled image is well formed")
    }

    /// Builds an image from `f(x, y, channel)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data).expect("from_fn produced a malformed image")
    }

    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Channel mean at a pixel.
    pub fn luminance(&self, x: usize, y: usize) -> f64 {
        self.pixel(x, y).iter().sum::<f64>() / self.channels as f64
    }

    /// Applies `value * gain + offset` to every sample, clamped to `[0, 1]`.
    pub fn adjusted(&self, gain: f64, offset: f64) -> Image {
        let data = self
            .data
            .iter()
            .map(|v| (v * gain + offset).clamp(0.0, 1.0))
            .collect();
        Image::from_raw(self.width, self.height, self.channels, data)
    }

    /// Samples at a continuous coordinate into `out` (one value per channel).
    /// Returns `false` (and zeros) when the coordinate is outside the image.
    #[inline]
    pub fn sample_into(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        match self.cell(x, y) {
            Some(cell) => {
                for (c, o) in out.iter_mut().enumerate().take(self.channels) {
                    let (v00, v10, v01, v11) = self.corners(&cell, c);
                    let top = v00 + cell.fx * (v10 - v00);
                    let bottom = v01 + cell.fx * (v11 - v01);
                    *o = top + cell.fy * (bottom - top);
                }
                true
            }
            None => {
                out.iter_mut().for_each(|o| *o = 0.0);
                false
            }
        }
    }

    /// Like [`Image::sample_into`] but also returns the partial derivatives of
    /// the interpolant with respect to `x` and `y`.
    #[inline]
    pub fn sample_with_gradient(
        &self,
        x: f64,
        y: f64,
        value: &mut [f64],
        dx: &mut [f64],
        dy: &mut [f64],
    ) -> bool {
        match self.cell(x, y) {
            Some(cell) => {
                for c in 0..self.channels {
                    let (v00, v10, v01, v11) = self.corners(&cell, c);
                    let top = v00 + cell.fx * (v10 - v00);
                    let bottom = v01 + cell.fx * (v11 - v01);
                    value[c] = top + cell.fy * (bottom - top);
                    dx[c] = (1.0 - cell.fy) * (v10 - v00) + cell.fy * (v11 - v01);
                    dy[c] = bottom - top;
                }
                true
            }
            None => {
                for c in 0..self.channels {
                    value[c] = 0.0;
                    dx[c] = 0.0;
                    dy[c] = 0.0;
                }
                false
            }
        }
    }

    #[inline]
    fn cell(&self, x: f64, y: f64) -> Option<Cell> {
        let (wm, hm) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= wm && y <= hm) {
            return None;
        }
        // The far border reuses the last cell so that x == width-1 stays exact.
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        Some(Cell {
            x0,
            y0,
            x1,
            y1,
            fx: x - x0 as f64,
            fy: y - y0 as f64,
        })
    }

    #[inline]
    fn corners(&self, cell: &Cell, c: usize) -> (f64, f64, f64, f64) {
        (
            self.get(cell.x0, cell.y0, c),
            self.get(cell.x1, cell.y0, c),
            self.get(cell.x0, cell.y1, c),
            self.get(cell.x1, cell.y1, c),
        )
    }
}

struct Cell {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    fx: f64,
    fy: f64,
}

/// Horizontal and vertical image derivatives, same shape as the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientImage {
    pub gx: Image,
    pub gy: Image,
}

/// An image together with the camera that captured it.
#[derive(Debug, Clone)]
pub struct View {
    pub image: Image,
    pub camera: Camera,
}

/// Binary per-pixel validity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl ValidityMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "mask data has {} entries for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub(crate) fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn all(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }
}

/// Per-pixel depth in scene units; zero or non-finite entries mark missing depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "depth data has {} entries for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub(crate) fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, depth: f64) -> Self {
        Self {
            width,
            height,
            data: vec![depth; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            data,
        }
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, depth: f64) {
        self.data[y * self.width + x] = depth;
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        is_valid_depth(self.get(x, y))
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| is_valid_depth(**d)).count()
    }
}

#[inline]
pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// Bilinear interpolation at a continuous coordinate. Out-of-bounds or invalid
/// coordinates yield `(zeros, false)`.
pub fn bilinear_sample(img: &Image, coord: PixelCoord) -> (Vec<f64>, bool) {
    let mut out = vec![0.0; img.channels()];
    if !coord.valid {
        return (out, false);
    }
    let ok = img.sample_into(coord.x, coord.y, &mut out);
    (out, ok)
}

/// Central differences in the interior, one-sided differences on the border.
pub fn image_gradient(img: &Image) -> Result<GradientImage> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if w < 2 || h < 2 {
        return Err(Error::InvalidImage(format!(
            "gradient needs at least 2x2 pixels, got {w}x{h}"
        )));
    }
    let gx = Image::from_raw(w, h, ch, directional_gradient(img, Axis::X));
    let gy = Image::from_raw(w, h, ch, directional_gradient(img, Axis::Y));
    Ok(GradientImage { gx, gy })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Axis {
    X,
    Y,
}

/// Stencil taps `(offset index along the axis, weight)` for the derivative at
/// position `i` of an axis with `n` samples.
#[inline]
pub(crate) fn gradient_taps(i: usize, n: usize) -> [(usize, f64); 2] {
    if i == 0 {
        [(1, 1.0), (0, -1.0)]
    } else if i == n - 1 {
        [(n - 1, 1.0), (n - 2, -1.0)]
    } else {
        [(i + 1, 0.5), (i - 1, -0.5)]
    }
}

fn directional_gradient(img: &Image, axis: Axis) -> Vec<f64> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = vec![0.0; w * h * ch];
    out.par_chunks_mut(w * ch).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let taps = match axis {
                Axis::X => gradient_taps(x, w),
                Axis::Y => gradient_taps(y, h),
            };
            for c in 0..ch {
                let mut acc = 0.0;
                for (pos, weight) in taps {
                    let v = match axis {
                        Axis::X => img.get(pos, y, c),
                        Axis::Y => img.get(x, pos, c),
                    };
                    acc += weight * v;
                }
                row[x * ch + c] = acc;
            }
        }
    });
    out
}

fn check_warp_shapes(depth: &DepthMap, img_view: &Image, cam_src: &Camera, cam_view: &Camera) -> Result<()> {
    if depth.width() != cam_src.width() || depth.height() != cam_src.height() {
        return Err(Error::ShapeMismatch(format!(
            "depth map is {}x{} but the source camera is {}x{}",
            depth.width(),
            depth.height(),
            cam_src.width(),
            cam_src.height()
        )));
    }
    if img_view.width() != cam_view.width() || img_view.height() != cam_view.height() {
        return Err(Error::ShapeMismatch(format!(
            "view image is {}x{} but its camera is {}x{}",
            img_view.width(),
            img_view.height(),
            cam_view.width(),
            cam_view.height()
        )));
    }
    Ok(())
}

/// Resamples `img_view` into the source frame using the source depth map.
pub fn inverse_warp(
    depth: &DepthMap,
    img_view: &Image,
    cam_src: &Camera,
    cam_view: &Camera,
) -> Result<(Image, ValidityMask)> {
    let warped = inverse_warp_differentiable(depth, img_view, cam_src, cam_view)?;
    Ok((warped.image, warped.mask))
}

/// Inverse warp that also keeps, per pixel, the warped coordinate and the
/// derivative of the warped intensity with respect to the source depth.
#[derive(Debug, Clone)]
pub struct DifferentiableWarp {
    pub image: Image,
    pub mask: ValidityMask,
    /// `∂Î/∂D` per pixel and channel; zero where the mask is invalid.
    pub d_image_d_depth: Image,
    /// Warped coordinate per pixel and its derivative with respect to depth.
    pub coords: Vec<PixelCoord>,
    pub d_coords_d_depth: Vec<(f64, f64)>,
}

pub fn inverse_warp_differentiable(
    depth: &DepthMap,
    img_view: &Image,
    cam_src: &Camera,
    cam_view: &Camera,
) -> Result<DifferentiableWarp> {
    check_warp_shapes(depth, img_view, cam_src, cam_view)?;
    let (w, h, ch) = (depth.width(), depth.height(), img_view.channels());
    let warp = PixelWarp::new(cam_src, cam_view);

    struct Row {
        values: Vec<f64>,
        derivs: Vec<f64>,
        mask: Vec<bool>,
        coords: Vec<PixelCoord>,
        dcoords: Vec<(f64, f64)>,
    }

    let rows: Vec<Row> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Row {
                values: vec![0.0; w * ch],
                derivs: vec![0.0; w * ch],
                mask: vec![false; w],
                coords: Vec::with_capacity(w),
                dcoords: Vec::with_capacity(w),
            };
            let mut dx = [0.0; 3];
            let mut dy = [0.0; 3];
            for x in 0..w {
                let d = depth.get(x, y);
                if !is_valid_depth(d) {
                    row.coords.push(PixelCoord::invalid(f64::NAN, f64::NAN));
                    row.dcoords.push((0.0, 0.0));
                    continue;
                }
                let s = warp.apply(x as f64, y as f64, d);
                row.coords.push(s.coord);
                row.dcoords.push(s.d_coord_d_depth);
                if !s.coord.valid {
                    continue;
                }
                let vals = &mut row.values[x * ch..(x + 1) * ch];
                if img_view.sample_with_gradient(s.coord.x, s.coord.y, vals, &mut dx, &mut dy) {
                    row.mask[x] = true;
                    let (ux, uy) = s.d_coord_d_depth;
                    for c in 0..ch {
                        row.derivs[x * ch + c] = dx[c] * ux + dy[c] * uy;
                    }
                }
            }
            row
        })
        .collect();

    let mut values = Vec::with_capacity(w * h * ch);
    let mut derivs = Vec::with_capacity(w * h * ch);
    let mut mask = Vec::with_capacity(w * h);
    let mut coords = Vec::with_capacity(w * h);
    let mut dcoords = Vec::with_capacity(w * h);
    for row in rows {
        values.extend(row.values);
        derivs.extend(row.derivs);
        mask.extend(row.mask);
        coords.extend(row.coords);
        dcoords.extend(row.dcoords);
    }
    Ok(DifferentiableWarp {
        image: Image::from_raw(w, h, ch, values),
        mask: ValidityMask {
            width: w,
            height: h,
            data: mask,
        },
        d_image_d_depth: Image::from_raw(w, h, ch, derivs),
        coords,
        d_coords_d_depth: dcoords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, ch: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * ch).map(|_| rng.random::<f64>()).collect();
        Image::new(w, h, ch, data).unwrap()
    }

    #[test]
    fn integer_coordinates_are_exact() {
        let img = random_image(10, 12, 3, 1);
        let (v, ok) = bilinear_sample(&img, PixelCoord::new(3.0, 7.0));
        assert!(ok);
        assert_eq!(v, img.pixel(3, 7));
        // Far corner stays inside and exact.
        let (v, ok) = bilinear_sample(&img, PixelCoord::new(9.0, 11.0));
        assert!(ok);
        assert_eq!(v, img.pixel(9, 11));
    }

    #[test]
    fn midpoint_is_average() {
        let img = random_image(5, 4, 1, 2);
        let (v, ok) = bilinear_sample(&img, PixelCoord::new(0.5, 0.0));
        assert!(ok);
        assert_abs_diff_eq!(v[0], 0.5 * (img.get(0, 0, 0) + img.get(1, 0, 0)), epsilon = 1e-15);
    }

    #[test]
    fn out_of_bounds_is_invalid_zero() {
        let img = random_image(5, 4, 1, 3);
        let (v, ok) = bilinear_sample(&img, PixelCoord::new(-0.5, 2.0));
        assert!(!ok);
        assert_eq!(v, vec![0.0]);
        let (_, ok) = bilinear_sample(&img, PixelCoord::new(4.0001, 2.0));
        assert!(!ok);
        let (_, ok) = bilinear_sample(&img, PixelCoord::invalid(2.0, 2.0));
        assert!(!ok);
    }

    #[test]
    fn sampler_derivative_matches_finite_differences() {
        let img = random_image(8, 8, 1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-4;
        for _ in 0..200 {
            let x: f64 = rng.random_range(0.2..6.8);
            let y: f64 = rng.random_range(0.2..6.8);
            if (x - x.round()).abs() < 2.0 * h || (y - y.round()).abs() < 2.0 * h {
                continue;
            }
            let (mut v, mut dx, mut dy) = ([0.0], [0.0], [0.0]);
            assert!(img.sample_with_gradient(x, y, &mut v, &mut dx, &mut dy));
            let f = |x: f64, y: f64| bilinear_sample(&img, PixelCoord::new(x, y)).0[0];
            let fdx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
            let fdy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
            assert!((dx[0] - fdx).abs() <= 1e-5 * dx[0].abs().max(1e-3));
            assert!((dy[0] - fdy).abs() <= 1e-5 * dy[0].abs().max(1e-3));
        }
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let g = image_gradient(&Image::filled(6, 5, 3, 0.4)).unwrap();
        assert!(g.gx.data().iter().all(|v| *v == 0.0));
        assert!(g.gy.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ramp_gradient_is_exact() {
        let img = Image::from_fn(7, 5, 1, |x, _, _| 0.01 * x as f64);
        let g = image_gradient(&img).unwrap();
        for v in g.gx.data() {
            assert_abs_diff_eq!(*v, 0.01, epsilon = 1e-15);
        }
        assert!(g.gy.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn random_gradient_matches_stencil_oracle() {
        let img = random_image(8, 8, 1, 9);
        let g = image_gradient(&img).unwrap();
        let v = |x: usize, y: usize| img.get(x, y, 0);
        for y in 0..8 {
            for x in 0..8 {
                let gx = match x {
                    0 => v(1, y) - v(0, y),
                    7 => v(7, y) - v(6, y),
                    _ => (v(x + 1, y) - v(x - 1, y)) / 2.0,
                };
                let gy = match y {
                    0 => v(x, 1) - v(x, 0),
                    7 => v(x, 7) - v(x, 6),
                    _ => (v(x, y + 1) - v(x, y - 1)) / 2.0,
                };
                assert_eq!(g.gx.get(x, y, 0), gx);
                assert_eq!(g.gy.get(x, y, 0), gy);
            }
        }
    }

    #[test]
    fn gradient_rejects_tiny_images() {
        assert!(image_gradient(&Image::filled(1, 5, 1, 0.0)).is_err());
        assert!(image_gradient(&Image::filled(5, 1, 1, 0.0)).is_err());
    }

    #[test]
    fn image_rejects_bad_data() {
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }
}
