//! 8-bit PNG reading/writing for imagery and label masks.

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

use super::types::RasterImage;

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a 3-channel image as 8-bit RGB PNG.
pub fn write_image_png(image: &RasterImage, path: &Path) -> Result<()> {
    let (c, h, w) = image.pixels.dim();
    if c != 3 {
        return Err(Error::ShapeMismatch(format!("imagery needs 3 channels, got {c}")));
    }
    let mut buf = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                buf[(y * w + x) * 3 + ch] = quantize(image.pixels[(ch, y, x)]);
            }
        }
    }
    image::save_buffer(
        path,
        &buf,
        w as u32,
        h as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Read an 8-bit RGB PNG into a normalized RasterImage with the given gsd.
pub fn read_image_png(path: &Path, gsd: f64) -> Result<RasterImage> {
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let mut pixels = Array3::zeros((3, h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            pixels[(c, y as usize, x as usize)] = p.0[c] as f64 / 255.0;
        }
    }
    RasterImage::new(pixels, gsd)
}

/// Write a grade map (values 0-4 and 255) as single-channel 8-bit PNG.
pub fn write_mask_png(grades: &Array2<u8>, path: &Path) -> Result<()> {
    let (h, w) = grades.dim();
    let buf: Vec<u8> = grades.iter().copied().collect();
    image::save_buffer(path, &buf, w as u32, h as u32, image::ColorType::L8)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Read a single-channel 8-bit PNG grade map.
pub fn read_mask_png(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
        .into_luma8();
    let (w, h) = img.dimensions();
    let mut grades = Array2::zeros((h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        grades[(y as usize, x as usize)] = p.0[0];
    }
    Ok(grades)
}
