//! Core light field containers: the 4D view grid, the cross stack extracted
//! from it, and disparity maps with validity masks.
//!
//! Conventions used throughout the crate:
//!
//! * Views are stored channel-major as `Array3<f32>` with shape `(3, H, W)`
//!   and linear color values in `[0, 1]`.
//! * Camera indices: the grid is indexed `(v, u)` with `v` selecting the row
//!   and `u` the column. Signed camera coordinates place the center camera at
//!   zero, positive `u` to the right and positive `v` downward.
//! * Disparity is measured in pixels between adjacent views and may be
//!   negative (rectification pre-shift).

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// A single RGB view, shape `(3, H, W)`, linear values in `[0, 1]`.
pub type View = Array3<f32>;

/// Boolean per-pixel mask, shape `(H, W)`.
pub type Mask = Array2<bool>;

/// A full 4D light field: an `nv x nu` grid of calibrated views plus the
/// disparity bounds of the scene.
#[derive(Debug, Clone)]
pub struct LightField4D {
    /// Views in row-major grid order; index `v * nu + u`.
    views: Vec<View>,
    nu: usize,
    nv: usize,
    pub disp_min: f32,
    pub disp_max: f32,
}

impl LightField4D {
    /// Builds a light field from a row-major view list, validating the grid.
    pub fn new(views: Vec<View>, nu: usize, nv: usize, disp_min: f32, disp_max: f32) -> Result<Self> {
        if nu < 3 || nv < 3 || nu % 2 == 0 || nv % 2 == 0 {
            return Err(Error::Config(format!(
                "view counts must be odd and >= 3, got nu={nu}, nv={nv}"
            )));
        }
        if views.len() != nu * nv {
            return Err(Error::Config(format!(
                "expected {} views, got {}",
                nu * nv,
                views.len()
            )));
        }
        let dim = views[0].dim();
        if dim.0 != 3 {
            return Err(Error::Config(format!("views must have 3 channels, got {}", dim.0)));
        }
        if let Some(bad) = views.iter().position(|v| v.dim() != dim) {
            return Err(Error::Config(format!(
                "view {bad} has size {:?}, expected {:?}",
                views[bad].dim(),
                dim
            )));
        }
        if disp_min > disp_max {
            return Err(Error::Config(format!(
                "disp_min {disp_min} exceeds disp_max {disp_max}"
            )));
        }
        Ok(Self { views, nu, nv, disp_min, disp_max })
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    /// Image height of every view.
    pub fn height(&self) -> usize {
        self.views[0].dim().1
    }

    /// Image width of every view.
    pub fn width(&self) -> usize {
        self.views[0].dim().2
    }

    /// The view at grid position `(v, u)`.
    pub fn view(&self, v: usize, u: usize) -> &View {
        &self.views[v * self.nu + u]
    }

    /// Views in row-major grid order.
    pub fn views(&self) -> &[View] {
        &self.views
    }

    /// The central view of the grid.
    pub fn center_view(&self) -> &View {
        self.view(self.nv / 2, self.nu / 2)
    }

    /// Extracts the cross setup: the center row as the horizontal stack and
    /// the center column as the vertical stack. The shared center view is
    /// verified to be pixel-identical in both.
    pub fn extract_cross(&self) -> Result<CrossStack> {
        let cv = self.nv / 2;
        let cu = self.nu / 2;
        let horizontal: Vec<View> = (0..self.nu).map(|u| self.view(cv, u).clone()).collect();
        let vertical: Vec<View> = (0..self.nv).map(|v| self.view(v, cu).clone()).collect();
        CrossStack::new(horizontal, vertical)
    }
}

/// Horizontal and vertical view stacks sharing a center view.
///
/// `horizontal[center_u]` and `vertical[center_v]` are the same image. The
/// signed camera coordinate of `horizontal[i]` is `i - center_u` (positive to
/// the right), and of `vertical[j]` is `j - center_v` (positive downward).
#[derive(Debug, Clone)]
pub struct CrossStack {
    pub horizontal: Vec<View>,
    pub vertical: Vec<View>,
    pub center_u: usize,
    pub center_v: usize,
}

impl CrossStack {
    /// Builds a cross stack, checking stack sizes and the shared-center invariant.
    pub fn new(horizontal: Vec<View>, vertical: Vec<View>) -> Result<Self> {
        let nu = horizontal.len();
        let nv = vertical.len();
        if nu < 3 || nv < 3 || nu % 2 == 0 || nv % 2 == 0 {
            return Err(Error::Config(format!(
                "stack lengths must be odd and >= 3, got U={nu}, V={nv}"
            )));
        }
        let dim = horizontal[0].dim();
        if horizontal.iter().chain(vertical.iter()).any(|v| v.dim() != dim) {
            return Err(Error::Config("cross stack views have mismatched sizes".into()));
        }
        let center_u = nu / 2;
        let center_v = nv / 2;
        if horizontal[center_u] != vertical[center_v] {
            return Err(Error::Config(
                "center views of horizontal and vertical stacks differ".into(),
            ));
        }
        Ok(Self { horizontal, vertical, center_u, center_v })
    }

    pub fn height(&self) -> usize {
        self.horizontal[0].dim().1
    }

    pub fn width(&self) -> usize {
        self.horizontal[0].dim().2
    }

    /// The shared center view.
    pub fn center_view(&self) -> &View {
        &self.horizontal[self.center_u]
    }
}

/// A per-pixel continuous disparity map with a validity mask.
#[derive(Debug, Clone)]
pub struct DisparityMap {
    /// Disparity in pixels; positive is the standard sign, negative allowed.
    pub values: Array2<f32>,
    /// True where `values` is meaningful (and finite).
    pub valid: Mask,
}

impl DisparityMap {
    pub fn new(values: Array2<f32>, valid: Mask) -> Result<Self> {
        if values.dim() != valid.dim() {
            return Err(Error::ShapeMismatch(format!(
                "disparity {:?} vs mask {:?}",
                values.dim(),
                valid.dim()
            )));
        }
        if values.iter().zip(valid.iter()).any(|(v, &m)| m && !v.is_finite()) {
            return Err(Error::Config("non-finite disparity marked valid".into()));
        }
        Ok(Self { values, valid })
    }

    /// A map that is valid everywhere.
    pub fn all_valid(values: Array2<f32>) -> Result<Self> {
        let valid = Array2::from_elem(values.dim(), true);
        Self::new(values, valid)
    }

    pub fn height(&self) -> usize {
        self.values.dim().0
    }

    pub fn width(&self) -> usize {
        self.values.dim().1
    }

    /// Min and max disparity over valid pixels, if any pixel is valid.
    pub fn valid_range(&self) -> Option<(f32, f32)> {
        let mut range: Option<(f32, f32)> = None;
        for (v, &m) in self.values.iter().zip(self.valid.iter()) {
            if m {
                let (lo, hi) = range.get_or_insert((*v, *v));
                *lo = lo.min(*v);
                *hi = hi.max(*v);
            }
        }
        range
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn flat_view(h: usize, w: usize, value: f32) -> View {
        Array3::from_elem((3, h, w), value)
    }

    fn grid(nu: usize, nv: usize, h: usize, w: usize) -> Vec<View> {
        (0..nu * nv).map(|i| flat_view(h, w, i as f32 / (nu * nv) as f32)).collect()
    }

    #[test]
    fn extract_cross_takes_center_row_and_column() {
        let lf = LightField4D::new(grid(9, 9, 4, 5), 9, 9, -2.0, 2.0).unwrap();
        let cross = lf.extract_cross().unwrap();
        assert_eq!(cross.horizontal.len(), 9);
        assert_eq!(cross.vertical.len(), 9);
        assert_eq!(cross.center_u, 4);
        assert_eq!(cross.horizontal[4], cross.vertical[4]);
        // Horizontal stack aliases the grid's center row exactly.
        for u in 0..9 {
            assert_eq!(&cross.horizontal[u], lf.view(4, u));
        }
        for v in 0..9 {
            assert_eq!(&cross.vertical[v], lf.view(v, 4));
        }
    }

    #[test]
    fn extract_cross_on_constant_grid() {
        let views = (0..9).map(|_| flat_view(2, 2, 0.5)).collect();
        let lf = LightField4D::new(views, 3, 3, 0.0, 0.0).unwrap();
        let cross = lf.extract_cross().unwrap();
        assert_eq!(cross.horizontal[1], cross.vertical[1]);
    }

    #[test]
    fn mismatched_center_is_rejected() {
        // A cross whose vertical center differs from the horizontal one in a
        // single pixel must fail the shared-center invariant.
        let horizontal: Vec<View> = (0..3).map(|_| flat_view(2, 2, 0.5)).collect();
        let mut vcenter = flat_view(2, 2, 0.5);
        vcenter[(0, 0, 0)] += f32::EPSILON;
        let vertical = vec![flat_view(2, 2, 0.5), vcenter, flat_view(2, 2, 0.5)];
        assert!(CrossStack::new(horizontal, vertical).is_err());
    }

    #[test]
    fn even_grid_rejected() {
        assert!(LightField4D::new(grid(4, 3, 2, 2), 4, 3, 0.0, 1.0).is_err());
    }

    #[test]
    fn disparity_map_requires_finite_valid_values() {
        let mut values = Array2::zeros((2, 2));
        values[(0, 0)] = f32::NAN;
        let valid = Array2::from_elem((2, 2), true);
        assert!(DisparityMap::new(values.clone(), valid).is_err());
        let mut valid = Array2::from_elem((2, 2), true);
        valid[(0, 0)] = false;
        assert!(DisparityMap::new(values, valid).is_ok());
    }
}
