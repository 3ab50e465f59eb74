use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::imaging::Image;

use super::{atomic_write, read_bytes};

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = read_bytes(path)?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| Error::format(path, e.to_string()))
}

/// Loads an 8- or 16-bit PNG as intensities in `[0, 1]`: gray images get one
/// channel, anything with color three (alpha is dropped).
pub fn read_image(path: &Path) -> Result<Image> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let color = img.color().has_color();
    let data: Vec<f64> = if color {
        img.into_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
    } else {
        img.into_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
    };
    Image::new(w, h, if color { 3 } else { 1 }, data).map_err(|e| Error::format(path, e.to_string()))
}

fn encode(img: DynamicImage, path: &Path) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(out.into_inner())
}

/// Writes a 16-bit gray or RGB PNG, clamping intensities to `[0, 1]`.
pub fn write_image_png16(path: &Path, img: &Image) -> Result<()> {
    let raw: Vec<u16> = img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("buffer size")),
        _ => DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).expect("buffer size")),
    };
    atomic_write(path, &encode(dynamic, path)?)
}

pub fn write_gray8_png(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let buf = ImageBuffer::<Luma<u8>, _>::from_raw(width as u32, height as u32, data.to_vec())
        .ok_or_else(|| Error::ShapeMismatch("mask data does not match its size".into()))?;
    atomic_write(path, &encode(DynamicImage::ImageLuma8(buf), path)?)
}

pub fn read_gray8_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = decode(path)?.into_luma8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}
