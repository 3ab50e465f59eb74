use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4};

use crate::error::{Error, Result};
use crate::geometry::Camera;

use super::atomic_write;

/// Hypothesis count implied by the `depth_min depth_interval` line.
pub const DEPTH_PLANES: usize = 128;

/// Parses a camera file:
///
/// ```text
/// extrinsic
/// <4 rows of 4 numbers>
///
/// intrinsic
/// <3 rows of 3 numbers>
///
/// depth_min depth_interval [num_depth [depth_max]]
/// ```
///
/// Without an explicit maximum, `depth_max = depth_min + (num_depth - 1) *
/// depth_interval` with `num_depth` defaulting to [`DEPTH_PLANES`].
pub fn parse_camera(text: &str, path: &Path, width: usize, height: usize) -> Result<Camera> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let last_line = text.lines().count().max(1);
    let expect_keyword = |kw: &str, lines: &mut dyn Iterator<Item = (usize, &str)>| -> Result<()> {
        match lines.next() {
            Some((_, l)) if l == kw => Ok(()),
            Some((n, l)) => Err(err(n, format!("expected '{kw}', found '{l}'"))),
            None => Err(err(last_line, format!("missing '{kw}' section"))),
        }
    };
    let numbers = |count: usize, lines: &mut dyn Iterator<Item = (usize, &str)>| -> Result<Vec<f64>> {
        let (n, l) = lines.next().ok_or_else(|| err(last_line, "unexpected end of file".into()))?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(n, format!("'{t}' is not a number"))))
            .collect::<Result<_>>()?;
        if vals.len() != count {
            return Err(err(n, format!("expected {count} numbers, found {}", vals.len())));
        }
        Ok(vals)
    };

    expect_keyword("extrinsic", &mut lines)?;
    let mut ext = Matrix4::zeros();
    for r in 0..4 {
        for (c, v) in numbers(4, &mut lines)?.into_iter().enumerate() {
            ext[(r, c)] = v;
        }
    }
    expect_keyword("intrinsic", &mut lines)?;
    let mut k = Matrix3::zeros();
    for r in 0..3 {
        for (c, v) in numbers(3, &mut lines)?.into_iter().enumerate() {
            k[(r, c)] = v;
        }
    }
    let (n, l) = lines
        .next()
        .ok_or_else(|| err(last_line, "missing depth range line".into()))?;
    let depth: Vec<f64> = l
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| err(n, format!("'{t}' is not a number"))))
        .collect::<Result<_>>()?;
    let (dmin, dmax) = match depth.as_slice() {
        [min, interval] => (*min, min + (DEPTH_PLANES - 1) as f64 * interval),
        [min, interval, planes] => (*min, min + (planes - 1.0) * interval),
        [min, _, _, max] => (*min, *max),
        _ => return Err(err(n, "expected 'depth_min depth_interval [num_depth [depth_max]]'".into())),
    };
    if let Some((n, l)) = lines.next() {
        return Err(err(n, format!("unexpected trailing content '{l}'")));
    }
    Camera::new(k, ext, dmin, dmax, width, height).map_err(|e| err(n, e.to_string()))
}

pub fn read_camera(path: &Path, width: usize, height: usize) -> Result<Camera> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_camera(&text, path, width, height)
}

/// Camera file text; the interval is `(depth_max - depth_min) / (DEPTH_PLANES - 1)`.
pub fn format_camera(cam: &Camera) -> String {
    let mut s = String::from("extrinsic\n");
    let e = cam.extrinsics();
    for r in 0..4 {
        let _ = writeln!(s, "{} {} {} {}", e[(r, 0)], e[(r, 1)], e[(r, 2)], e[(r, 3)]);
    }
    s.push_str("\nintrinsic\n");
    let k = cam.intrinsics();
    for r in 0..3 {
        let _ = writeln!(s, "{} {} {}", k[(r, 0)], k[(r, 1)], k[(r, 2)]);
    }
    let interval = (cam.depth_max() - cam.depth_min()) / (DEPTH_PLANES - 1) as f64;
    let _ = writeln!(s, "\n{} {}", cam.depth_min(), interval);
    s
}

pub fn write_camera(path: &Path, cam: &Camera) -> Result<()> {
    atomic_write(path, format_camera(cam).as_bytes())
}
