use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::DepthMap;

use super::{atomic_write, read_bytes};

/// Single-channel little-endian PFM (`Pf`, scale -1), rows stored bottom-up.
pub fn encode_pfm(width: usize, height: usize, data: &[f64]) -> Vec<u8> {
    let mut out = format!("Pf\n{width} {height}\n-1\n").into_bytes();
    out.reserve(width * height * 4);
    for y in (0..height).rev() {
        for v in &data[y * width..(y + 1) * width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| std::str::from_utf8(&bytes[start..*pos]).ok()).flatten()
}

/// Parses a single-channel PFM into `(width, height, row-major top-down values)`.
pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |m: &str| Error::format(path, m.to_string());
    let mut pos = 0;
    match header_token(bytes, &mut pos) {
        Some("Pf") => {}
        Some("PF") => return Err(bad("three-channel PFM is not supported")),
        _ => return Err(bad("missing PFM magic")),
    }
    let mut num = || header_token(bytes, &mut pos).ok_or_else(|| bad("truncated PFM header"));
    let width: usize = num()?.parse().map_err(|_| bad("bad PFM width"))?;
    let height: usize = num()?.parse().map_err(|_| bad("bad PFM height"))?;
    let scale: f64 = num()?.parse().map_err(|_| bad("bad PFM scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("PFM scale must be non-zero"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * 4;
    if bytes.len() < pos + need {
        return Err(bad("PFM raster is truncated"));
    }
    let raster = &bytes[pos..pos + need];
    let mut data = vec![0.0; width * height];
    for (i, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, col) = (i / width, i % width);
        data[(height - 1 - row) * width + col] = v as f64;
    }
    Ok((width, height, data))
}

pub fn write_pfm(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::ShapeMismatch("PFM data does not match its size".into()));
    }
    atomic_write(path, &encode_pfm(width, height, data))
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    decode_pfm(&read_bytes(path)?, path)
}

pub fn write_depth_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    write_pfm(path, depth.width(), depth.height(), depth.data())
}

/// Reads a depth map; non-finite or non-positive values become invalid (0).
pub fn read_depth_pfm(path: &Path) -> Result<DepthMap> {
    let (w, h, data) = read_pfm(path)?;
    let data = data.into_iter().map(|d| if d.is_finite() && d > 0.0 { d } else { 0.0 }).collect();
    DepthMap::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_orientation() {
        let data: Vec<f64> = (0..6).map(|i| i as f64 + 0.5).collect();
        let bytes = encode_pfm(3, 2, &data);
        let header_len = "Pf\n3 2\n-1\n".len();
        // The first stored row is the bottom image row.
        assert_eq!(f32::from_le_bytes(bytes[header_len..header_len + 4].try_into().unwrap()), 3.5);
        let (w, h, back) = decode_pfm(&bytes, Path::new("x.pfm")).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(back, data);
    }

    #[test]
    fn big_endian_is_read() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.25f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes, Path::new("x.pfm")).unwrap().2, vec![2.25]);
    }

    #[test]
    fn truncated_is_rejected() {
        let err = decode_pfm(b"Pf\n2 2\n-1\n\0\0", Path::new("d.pfm")).unwrap_err();
        assert!(err.to_string().contains("d.pfm"));
    }
}
