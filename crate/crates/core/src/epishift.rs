//! The EPI shift: a skew of a view stack by an integer disparity, plus the
//! 90-degree stack rotation that lets the vertical stack reuse the horizontal
//! machinery, and the plane-sweep construction built from both.
//!
//! Sign convention (fixed here and tested): the center camera sits at `u = 0`
//! with positive `u` to the right, and a shift by `s` reads
//! `output(u, x, y) = input(u, x - u*s, y)` with the source column clamped to
//! the image. A point at disparity `d` becomes aligned across views at
//! `s = d`. Because shifts are integral no interpolation happens: every
//! output pixel is a copy of an input pixel.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::lightfield::{CrossStack, Mask, View};

/// Default cap on the number of shifts in one sweep, guarding memory.
pub const DEFAULT_SWEEP_CAP: usize = 64;

/// An inclusive range of integer shifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepRange {
    pub s_min: i32,
    pub s_max: i32,
}

impl SweepRange {
    pub fn new(s_min: i32, s_max: i32) -> Result<Self> {
        if s_min > s_max {
            return Err(Error::Config(format!("sweep range [{s_min}, {s_max}] is empty")));
        }
        Ok(Self { s_min, s_max })
    }

    /// The smallest integer range covering `[disp_min, disp_max]`.
    pub fn from_disparity_bounds(disp_min: f32, disp_max: f32) -> Result<Self> {
        if !disp_min.is_finite() || !disp_max.is_finite() {
            return Err(Error::Config("non-finite disparity bounds".into()));
        }
        Self::new(disp_min.floor() as i32, disp_max.ceil() as i32)
    }

    pub fn len(&self) -> usize {
        (self.s_max - self.s_min) as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false // ranges are inclusive and validated non-empty
    }

    pub fn shifts(&self) -> impl Iterator<Item = i32> {
        self.s_min..=self.s_max
    }

    pub fn contains(&self, s: i32) -> bool {
        s >= self.s_min && s <= self.s_max
    }

    /// Clamps a shift into the range (used for sweep-end triples).
    pub fn clamp(&self, s: i32) -> i32 {
        s.clamp(self.s_min, self.s_max)
    }
}

/// A cross stack after an integer EPI shift, with the pixels that never read
/// a clamped (padded) sample in any view of either stack.
#[derive(Debug, Clone)]
pub struct ShiftedStack {
    pub stack: CrossStack,
    pub shift: i32,
    pub valid: Mask,
}

/// Shifts a u-indexed view stack by `s` pixels per camera step.
///
/// `center` is the index of the `u = 0` camera. Returns the shifted views and
/// the mask of pixels for which no view required clamping.
pub fn shift_horizontal(views: &[View], center: usize, s: i32) -> (Vec<View>, Mask) {
    let (_, h, w) = views[0].dim();
    let shifted: Vec<View> = views
        .iter()
        .enumerate()
        .map(|(i, view)| {
            let u = i as i64 - center as i64;
            shift_view_columns(view, u * s as i64)
        })
        .collect();
    let mut valid = Array2::from_elem((h, w), true);
    for (i, _) in views.iter().enumerate() {
        let u = i as i64 - center as i64;
        let d = u * s as i64;
        for x in 0..w {
            let src = x as i64 - d;
            if src < 0 || src >= w as i64 {
                for y in 0..h {
                    valid[(y, x)] = false;
                }
            }
        }
    }
    (shifted, valid)
}

/// `out(x) = in(clamp(x - delta))` applied to each row of each channel.
fn shift_view_columns(view: &View, delta: i64) -> View {
    let (c, h, w) = view.dim();
    let mut out = View::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let src = (x as i64 - delta).clamp(0, w as i64 - 1) as usize;
                out[(ch, y, x)] = view[(ch, y, src)];
            }
        }
    }
    out
}

/// Rotates a view 90 degrees counter-clockwise; height and width swap.
pub fn rotate_ccw(view: &View) -> View {
    let (c, h, w) = view.dim();
    View::from_shape_fn((c, w, h), |(ch, yp, xp)| view[(ch, xp, w - 1 - yp)])
}

/// Rotates a view 90 degrees clockwise; inverse of [`rotate_ccw`].
pub fn rotate_cw(view: &View) -> View {
    let (c, h, w) = view.dim();
    View::from_shape_fn((c, w, h), |(ch, yp, xp)| view[(ch, h - 1 - xp, yp)])
}

/// Counter-clockwise rotation of a boolean mask.
pub fn rotate_mask_ccw(mask: &Mask) -> Mask {
    let (h, w) = mask.dim();
    Mask::from_shape_fn((w, h), |(yp, xp)| mask[(xp, w - 1 - yp)])
}

/// Clockwise rotation of a boolean mask; inverse of [`rotate_mask_ccw`].
pub fn rotate_mask_cw(mask: &Mask) -> Mask {
    let (h, w) = mask.dim();
    Mask::from_shape_fn((w, h), |(yp, xp)| mask[(h - 1 - xp, yp)])
}

/// Rotates a v-indexed stack so it behaves like a horizontal stack: after the
/// rotation, a point at disparity `d` moves along the new x-axis by `v * d`,
/// so [`shift_horizontal`] applies unchanged with `v` in place of `u`.
pub fn rotate_for_vertical(views: &[View]) -> Vec<View> {
    views.iter().map(rotate_ccw).collect()
}

/// Inverse of [`rotate_for_vertical`].
pub fn rotate_from_vertical(views: &[View]) -> Vec<View> {
    views.iter().map(rotate_cw).collect()
}

/// Shifts both stacks of a cross by `s`.
///
/// The horizontal stack is shifted directly; the vertical stack is rotated,
/// shifted, and rotated back, which realizes the same skew along y. The valid
/// mask is the intersection over all views of both stacks.
pub fn shift_cross(cross: &CrossStack, s: i32) -> Result<ShiftedStack> {
    let (h_shifted, h_valid) = shift_horizontal(&cross.horizontal, cross.center_u, s);
    let v_rot = rotate_for_vertical(&cross.vertical);
    let (v_rot_shifted, v_rot_valid) = shift_horizontal(&v_rot, cross.center_v, s);
    let v_shifted = rotate_from_vertical(&v_rot_shifted);
    let v_valid = rotate_mask_cw(&v_rot_valid);
    let valid = Mask::from_shape_fn(h_valid.dim(), |idx| h_valid[idx] && v_valid[idx]);
    let stack = CrossStack::new(h_shifted, v_shifted)?;
    Ok(ShiftedStack { stack, shift: s, valid })
}

/// Builds the plane sweep volume: one shifted cross per integer shift.
pub fn build_sweep(cross: &CrossStack, range: SweepRange, cap: usize) -> Result<Vec<ShiftedStack>> {
    if range.len() > cap {
        return Err(Error::SweepTooLong { len: range.len(), cap });
    }
    range.shifts().map(|s| shift_cross(cross, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    /// A 3-view stack whose pixel value equals its x coordinate, all views equal.
    fn ramp_stack(w: usize) -> Vec<View> {
        (0..3)
            .map(|_| Array3::from_shape_fn((3, 2, w), |(_, _, x)| x as f32))
            .collect()
    }

    #[test]
    fn zero_shift_is_identity_with_full_mask() {
        let stack = ramp_stack(5);
        let (out, valid) = shift_horizontal(&stack, 1, 0);
        assert_eq!(out, stack);
        assert!(valid.iter().all(|&v| v));
    }

    #[test]
    fn hand_evaluated_three_view_shift() {
        // u in {-1, 0, 1}, W = 5, input(u, x) = x, s = 1.
        let stack = ramp_stack(5);
        let (out, valid) = shift_horizontal(&stack, 1, 1);
        let row = |view: &View| -> Vec<f32> { (0..5).map(|x| view[(0, 0, x)]).collect() };
        assert_eq!(row(&out[0]), vec![1.0, 2.0, 3.0, 4.0, 4.0]); // u = -1
        assert_eq!(row(&out[1]), vec![0.0, 1.0, 2.0, 3.0, 4.0]); // u = 0
        assert_eq!(row(&out[2]), vec![0.0, 0.0, 1.0, 2.0, 3.0]); // u = +1
        let valid_cols: Vec<usize> = (0..5).filter(|&x| valid[(0, x)]).collect();
        assert_eq!(valid_cols, vec![1, 2, 3]);
    }

    #[test]
    fn valid_mask_matches_index_arithmetic() {
        let views: Vec<View> = (0..5)
            .map(|i| Array3::from_shape_fn((3, 3, 11), |(c, y, x)| (i + c + y + x) as f32))
            .collect();
        for s in -3i64..=3 {
            let (_, valid) = shift_horizontal(&views, 2, s as i32);
            for x in 0..11i64 {
                let expect = (-2..=2i64).all(|u| {
                    let src = x - u * s;
                    (0..11).contains(&src)
                });
                assert_eq!(valid[(0, x as usize)], expect, "s={s}, x={x}");
            }
        }
    }

    #[test]
    fn composition_is_exact_on_jointly_valid_pixels() {
        let views: Vec<View> = (0..3)
            .map(|i| Array3::from_shape_fn((3, 4, 16), |(c, y, x)| ((i * 7 + c * 3 + y * 5 + x * 11) % 17) as f32))
            .collect();
        for a in -2i64..=2 {
            for b in -2i64..=2 {
                let (once, _) = shift_horizontal(&views, 1, (a + b) as i32);
                let (mid, _) = shift_horizontal(&views, 1, a as i32);
                let (twice, _) = shift_horizontal(&mid, 1, b as i32);
                for x in 0..16i64 {
                    let jointly_valid = (-1..=1i64).all(|u| {
                        (0..16).contains(&(x - u * b)) && (0..16).contains(&(x - u * (a + b)))
                    });
                    if jointly_valid {
                        for (i, _) in views.iter().enumerate() {
                            for y in 0..4 {
                                assert_eq!(
                                    twice[i][(0, y, x as usize)],
                                    once[i][(0, y, x as usize)],
                                    "a={a} b={b} view={i} x={x}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rotations_compose_to_identity() {
        let view = Array3::from_shape_fn((3, 4, 7), |(c, y, x)| (c * 100 + y * 10 + x) as f32);
        assert_eq!(rotate_cw(&rotate_ccw(&view)), view);
        assert_eq!(rotate_ccw(&rotate_cw(&view)), view);
        // Four quarter turns are the identity.
        let once = rotate_ccw(&view);
        let twice = rotate_ccw(&once);
        let thrice = rotate_ccw(&twice);
        assert_eq!(rotate_ccw(&thrice), view);
        let mask = Mask::from_shape_fn((4, 7), |(y, x)| (y + x) % 3 == 0);
        assert_eq!(rotate_mask_cw(&rotate_mask_ccw(&mask)), mask);
    }

    #[test]
    fn one_pixel_rotation_swaps_dims_only() {
        let view = Array3::from_elem((3, 1, 1), 0.7);
        let rot = rotate_ccw(&view);
        assert_eq!(rot.dim(), (3, 1, 1));
        assert_eq!(rot, view);
        let tall = Array3::from_shape_fn((3, 2, 1), |(_, y, _)| y as f32);
        assert_eq!(rotate_ccw(&tall).dim(), (3, 1, 2));
    }

    #[test]
    fn sweep_counts_match_ranges() {
        let views: Vec<View> = (0..3).map(|_| Array3::zeros((3, 4, 8))).collect();
        let cross = CrossStack::new(views.clone(), views).unwrap();
        let sweep = build_sweep(&cross, SweepRange::new(-2, 2).unwrap(), DEFAULT_SWEEP_CAP).unwrap();
        assert_eq!(sweep.len(), 5);
        assert_eq!(sweep.iter().map(|s| s.shift).collect::<Vec<_>>(), vec![-2, -1, 0, 1, 2]);

        let sweep = build_sweep(&cross, SweepRange::new(0, 12).unwrap(), DEFAULT_SWEEP_CAP).unwrap();
        assert_eq!(sweep.len(), 13);

        let sweep = build_sweep(&cross, SweepRange::new(0, 0).unwrap(), DEFAULT_SWEEP_CAP).unwrap();
        assert_eq!(sweep.len(), 1);
        assert!(sweep[0].valid.iter().all(|&v| v));
    }

    #[test]
    fn sweep_cap_is_enforced() {
        let views: Vec<View> = (0..3).map(|_| Array3::zeros((3, 2, 2))).collect();
        let cross = CrossStack::new(views.clone(), views).unwrap();
        let err = build_sweep(&cross, SweepRange::new(0, 64).unwrap(), 64).unwrap_err();
        assert!(matches!(err, Error::SweepTooLong { len: 65, cap: 64 }));
    }

    #[test]
    fn range_from_bounds_uses_floor_and_ceil() {
        let r = SweepRange::from_disparity_bounds(-1.2, 2.3).unwrap();
        assert_eq!((r.s_min, r.s_max), (-2, 3));
        let r = SweepRange::from_disparity_bounds(0.0, 0.0).unwrap();
        assert_eq!((r.s_min, r.s_max), (0, 0));
    }
}
