//! Merging per-shift network outputs into the final disparity map, and the
//! threshold-gated median refinement of low-confidence pixels.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::io::{load_tensor, save_tensor};
use crate::lightfield::{DisparityMap, Mask};

/// Per-shift classification and regression maps over a sweep.
#[derive(Debug, Clone)]
pub struct SweepVolumes {
    /// Strictly increasing integer shifts.
    pub shifts: Vec<i32>,
    pub c: Vec<Array2<f32>>,
    pub r: Vec<Array2<f32>>,
    pub valid: Vec<Mask>,
}

impl SweepVolumes {
    pub fn new(
        shifts: Vec<i32>,
        c: Vec<Array2<f32>>,
        r: Vec<Array2<f32>>,
        valid: Vec<Mask>,
    ) -> Result<Self> {
        if shifts.is_empty() {
            return Err(Error::ShapeMismatch("empty sweep volume".into()));
        }
        if shifts.len() != c.len() || shifts.len() != r.len() || shifts.len() != valid.len() {
            return Err(Error::ShapeMismatch(format!(
                "volume lengths disagree: {} shifts, {} C, {} R, {} masks",
                shifts.len(),
                c.len(),
                r.len(),
                valid.len()
            )));
        }
        if !shifts.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::ShapeMismatch("shifts must be strictly increasing".into()));
        }
        let dim = c[0].dim();
        if c.iter().any(|m| m.dim() != dim)
            || r.iter().any(|m| m.dim() != dim)
            || valid.iter().any(|m| m.dim() != dim)
        {
            return Err(Error::ShapeMismatch("volume maps have mismatched shapes".into()));
        }
        Ok(Self { shifts, c, r, valid })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.c[0].dim()
    }

    /// Writes the volume as `LFT1` tensors (`c.lft`, `r.lft`, `valid.lft`,
    /// `shifts.lft`) inside `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let (h, w) = self.dim();
        let s = self.shifts.len();
        let flatten = |maps: &[Array2<f32>]| -> Vec<f32> {
            maps.iter().flat_map(|m| m.iter().copied()).collect()
        };
        save_tensor(dir.join("c.lft"), &[s, h, w], &flatten(&self.c))?;
        save_tensor(dir.join("r.lft"), &[s, h, w], &flatten(&self.r))?;
        let valid: Vec<f32> = self
            .valid
            .iter()
            .flat_map(|m| m.iter().map(|&v| if v { 1.0 } else { 0.0 }))
            .collect();
        save_tensor(dir.join("valid.lft"), &[s, h, w], &valid)?;
        let shifts: Vec<f32> = self.shifts.iter().map(|&v| v as f32).collect();
        save_tensor(dir.join("shifts.lft"), &[s], &shifts)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (sdims, sdata) = load_tensor(dir.join("shifts.lft"))?;
        if sdims.len() != 1 {
            return Err(Error::file(dir.join("shifts.lft"), "expected rank-1 shift list"));
        }
        let shifts: Vec<i32> = sdata.iter().map(|&v| v as i32).collect();
        let read_maps = |name: &str| -> Result<(Vec<usize>, Vec<f32>)> {
            load_tensor(dir.join(name))
        };
        let (cdims, cdata) = read_maps("c.lft")?;
        let (rdims, rdata) = read_maps("r.lft")?;
        let (vdims, vdata) = read_maps("valid.lft")?;
        if cdims.len() != 3 || cdims != rdims || cdims != vdims || cdims[0] != shifts.len() {
            return Err(Error::file(dir, "inconsistent volume tensor shapes"));
        }
        let (s, h, w) = (cdims[0], cdims[1], cdims[2]);
        let unflatten = |data: &[f32]| -> Vec<Array2<f32>> {
            (0..s)
                .map(|i| {
                    Array2::from_shape_vec((h, w), data[i * h * w..(i + 1) * h * w].to_vec())
                        .expect("sizes checked above")
                })
                .collect()
        };
        let valid = (0..s)
            .map(|i| {
                Mask::from_shape_fn((h, w), |(y, x)| vdata[i * h * w + y * w + x] != 0.0)
            })
            .collect();
        Self::new(shifts, unflatten(&cdata), unflatten(&rdata), valid)
    }
}

/// Per pixel: the shift with the maximal classification score (ties go to the
/// smallest shift) plus that shift's regressed offset. Validity comes from
/// the chosen shift's mask.
pub fn fuse(vol: &SweepVolumes) -> DisparityMap {
    let (h, w) = vol.dim();
    let mut values = Array2::zeros((h, w));
    let mut valid = Mask::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            for i in 1..vol.shifts.len() {
                if vol.c[i][(y, x)] > vol.c[best][(y, x)] {
                    best = i;
                }
            }
            values[(y, x)] = vol.shifts[best] as f32 + vol.r[best][(y, x)];
            valid[(y, x)] = vol.valid[best][(y, x)];
        }
    }
    DisparityMap { values, valid }
}

/// Replaces every classification value of pixels whose maximal score stays
/// below `t` with the `k x k` median of the corresponding original map.
/// Medians are computed on the unmodified maps, so the result does not
/// depend on any processing order. Regression maps are left untouched.
pub fn refine(vol: &SweepVolumes, t: f32, k: usize) -> Result<SweepVolumes> {
    if k % 2 == 0 || k == 0 {
        return Err(Error::Config(format!("median kernel must be odd, got {k}")));
    }
    let (h, w) = vol.dim();
    let low_confidence = Mask::from_shape_fn((h, w), |idx| {
        vol.c.iter().map(|m| m[idx]).fold(f32::NEG_INFINITY, f32::max) < t
    });
    if low_confidence.iter().all(|&v| !v) {
        return Ok(vol.clone());
    }
    let mut out = vol.clone();
    let half = (k / 2) as i64;
    let mut window = Vec::with_capacity(k * k);
    for (orig, filtered) in vol.c.iter().zip(&mut out.c) {
        for y in 0..h {
            for x in 0..w {
                if !low_confidence[(y, x)] {
                    continue;
                }
                window.clear();
                for dy in -half..=half {
                    for dx in -half..=half {
                        let yy = y as i64 + dy;
                        let xx = x as i64 + dx;
                        if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                            window.push(orig[(yy as usize, xx as usize)]);
                        }
                    }
                }
                window.sort_by(|a, b| a.total_cmp(b));
                // Lower middle for the (border-clipped) even case.
                filtered[(y, x)] = window[(window.len() - 1) / 2];
            }
        }
    }
    Ok(out)
}
