//! Disparity map scoring: MSE (reported x100, the benchmark scale) and
//! BadPix, the fraction of pixels whose absolute error exceeds a threshold.

use std::path::Path;

use image::{ImageBuffer, Rgb};
use crate::error::{Error, Result};
use crate::lightfield::{DisparityMap, Mask};

/// Default BadPix threshold in pixels.
pub const DEFAULT_TAU: f32 = 0.07;

/// The combined evaluation mask: both maps valid.
pub fn eval_mask(pred: &DisparityMap, gt: &DisparityMap) -> Result<Mask> {
    if pred.values.dim() != gt.values.dim() {
        return Err(Error::ShapeMismatch(format!(
            "pred {:?} vs gt {:?}",
            pred.values.dim(),
            gt.values.dim()
        )));
    }
    Ok(Mask::from_shape_fn(pred.values.dim(), |idx| pred.valid[idx] && gt.valid[idx]))
}

/// `100 * mean((pred - gt)^2)` over masked pixels.
pub fn mse_x100(pred: &DisparityMap, gt: &DisparityMap, mask: &Mask) -> Result<f64> {
    if pred.values.dim() != gt.values.dim() || pred.values.dim() != mask.dim() {
        return Err(Error::ShapeMismatch("mse_x100: shapes disagree".into()));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (idx, &m) in mask.indexed_iter() {
        if m {
            let d = (pred.values[idx] - gt.values[idx]) as f64;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(100.0 * sum / count as f64)
}

/// Fraction of masked pixels with `|pred - gt| > tau` (strict: an error of
/// exactly `tau` counts as good), plus the per-pixel bad map.
pub fn badpix(
    pred: &DisparityMap,
    gt: &DisparityMap,
    mask: &Mask,
    tau: f32,
) -> Result<(f64, Mask)> {
    if pred.values.dim() != gt.values.dim() || pred.values.dim() != mask.dim() {
        return Err(Error::ShapeMismatch("badpix: shapes disagree".into()));
    }
    if tau <= 0.0 {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    let mut bad = 0usize;
    let mut count = 0usize;
    let bad_map = Mask::from_shape_fn(pred.values.dim(), |idx| {
        if !mask[idx] {
            return false;
        }
        count += 1;
        let is_bad = (pred.values[idx] - gt.values[idx]).abs() > tau;
        if is_bad {
            bad += 1;
        }
        is_bad
    });
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((bad as f64 / count as f64, bad_map))
}

/// A metrics report for one prediction.
#[derive(Debug, Clone, Copy)]
pub struct Report {
    pub mse_x100: f64,
    pub badpix: f64,
    pub tau: f32,
    pub pixels: usize,
}

impl Report {
    pub fn compute(pred: &DisparityMap, gt: &DisparityMap, tau: f32) -> Result<Self> {
        let mask = eval_mask(pred, gt)?;
        let pixels = mask.iter().filter(|&&m| m).count();
        let mse = mse_x100(pred, gt, &mask)?;
        let (bp, _) = badpix(pred, gt, &mask, tau)?;
        Ok(Self { mse_x100: mse, badpix: bp, tau, pixels })
    }

    pub fn csv_header() -> &'static str {
        "mse_x100,badpix,tau,pixels"
    }

    pub fn to_csv_row(&self) -> String {
        format!("{:.6},{:.6},{},{}", self.mse_x100, self.badpix, self.tau, self.pixels)
    }

    pub fn to_table(&self) -> String {
        format!(
            "metric          value\n\
             mse_x100      {:>9.4}\n\
             badpix({:.2})  {:>9.4}\n\
             pixels        {:>9}\n",
            self.mse_x100, self.tau, self.badpix, self.pixels
        )
    }
}

/// Writes the bad-pixel visualization: bad pixels red over the normalized
/// ground-truth disparity in grayscale; pixels outside the mask black.
pub fn write_badpix_png(
    path: impl AsRef<Path>,
    bad: &Mask,
    gt: &DisparityMap,
    mask: &Mask,
) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = bad.dim();
    let (lo, hi) = gt.valid_range().unwrap_or((0.0, 1.0));
    let span = (hi - lo).max(1e-6);
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let idx = (y as usize, x as usize);
        if !mask[idx] {
            Rgb([0u8, 0, 0])
        } else if bad[idx] {
            Rgb([220u8, 30, 30])
        } else {
            let g = (((gt.values[idx] - lo) / span).clamp(0.0, 1.0) * 255.0) as u8;
            Rgb([g, g, g])
        }
    });
    img.save(path)
        .map_err(|e| Error::ImageDecode { path: path.into(), msg: e.to_string() })
}
