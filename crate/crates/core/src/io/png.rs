//! PNG helpers for 8-bit RGB views and boolean masks.

use std::path::Path;

use image::{ImageBuffer, ImageReader, Rgb, Rgba};
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::lightfield::{Mask, View};

/// Decodes an 8-bit RGB PNG into a linear `[0, 1]` view by dividing by 255.
pub fn read_view_png(path: impl AsRef<Path>) -> Result<View> {
    let path = path.as_ref();
    let img = ImageReader::open(path)?
        .decode()
        .map_err(|e| Error::ImageDecode { path: path.into(), msg: e.to_string() })?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut view = Array3::zeros((3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            view[(c, y as usize, x as usize)] = px.0[c] as f32 / 255.0;
        }
    }
    Ok(view)
}

/// Quantizes a `[0, 1]` view to 8-bit RGB and writes it as PNG.
pub fn write_view_png(path: impl AsRef<Path>, view: &View) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = view.dim();
    if c != 3 {
        return Err(Error::ShapeMismatch(format!("expected 3 channels, got {c}")));
    }
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| {
            (view[(ch, y as usize, x as usize)].clamp(0.0, 1.0) * 255.0).round() as u8
        };
        Rgb([px(0), px(1), px(2)])
    });
    img.save(path)
        .map_err(|e| Error::ImageDecode { path: path.into(), msg: e.to_string() })
}

/// Writes a boolean mask as a black/white PNG (white = true).
pub fn write_mask_png(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = mask.dim();
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = if mask[(y as usize, x as usize)] { 255u8 } else { 0 };
        Rgba([v, v, v, 255])
    });
    img.save(path)
        .map_err(|e| Error::ImageDecode { path: path.into(), msg: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_png_round_trip_preserves_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.png");
        let mut view = Array3::zeros((3, 4, 5));
        for (i, v) in view.iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f32 / 255.0;
        }
        write_view_png(&path, &view).unwrap();
        let back = read_view_png(&path).unwrap();
        assert_eq!(back.dim(), (3, 4, 5));
        // Values are already exact multiples of 1/255, so this is lossless.
        assert_eq!(view, back);
    }
}
