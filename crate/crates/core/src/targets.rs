//! Classification/regression ground truth per shift and the training losses.
//!
//! For a shift `s`, a pixel with true disparity `D*` is a positive example
//! when `|D* - s| <= 0.5 + eps` (rectangle target) or weighted by
//! `max(0.5 + eps - |D* - s|, 0)` (triangle target). The regression target is
//! the residual `D* - s`, supervised only inside a rectangle gate built with
//! a slightly larger epsilon. The classification loss is a squared error
//! weighted per pixel by the squared error of the fused disparity of the
//! current forward pass, which concentrates training on pixels whose end
//! result is still wrong; that weight is treated as a constant (no gradient
//! flows through the fused argmax).
//!
//! Sums are accumulated in f64 and divided by the number of contributing
//! pixels, so the loss scale is independent of the patch size.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::lightfield::{DisparityMap, Mask};

/// Target shape for the classification ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Rectangle,
    Triangle,
}

/// Target construction and loss weighting parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSpec {
    pub kind: TargetKind,
    /// Overlap margin for the classification target.
    pub eps_class: f32,
    /// Margin for the regression gate; kept above `eps_class`.
    pub eps_reg: f32,
    /// Weight of the regression loss in the total.
    pub alpha: f32,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self { kind: TargetKind::Rectangle, eps_class: 0.17, eps_reg: 0.25, alpha: 2.5 }
    }
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.eps_class < 0.0 {
            return Err(Error::Config("eps_class must be >= 0".into()));
        }
        if self.eps_reg < self.eps_class {
            return Err(Error::Config("eps_reg must be >= eps_class".into()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config("alpha must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-shift supervision: classification target, regression target and gate,
/// and the mask of pixels that contribute to losses.
#[derive(Debug, Clone)]
pub struct ShiftTargets {
    pub shift: i32,
    pub c_star: Array2<f32>,
    /// Residual disparity `D* - s`; zero where the ground truth is invalid.
    pub r_star: Array2<f32>,
    /// Rectangle gate built with `eps_reg`.
    pub r_gate: Array2<f32>,
    /// Padding validity AND ground-truth validity.
    pub loss_mask: Mask,
}

impl ShiftTargets {
    /// Builds targets for shift `s`. `padding_valid` marks pixels untouched
    /// by shift clamping in every stack the network sees for this sample.
    pub fn build(gt: &DisparityMap, s: i32, spec: &TargetSpec, padding_valid: &Mask) -> Result<Self> {
        if gt.values.dim() != padding_valid.dim() {
            return Err(Error::ShapeMismatch(format!(
                "gt {:?} vs padding mask {:?}",
                gt.values.dim(),
                padding_valid.dim()
            )));
        }
        let c_star = match spec.kind {
            TargetKind::Rectangle => rect_target(gt, s, spec.eps_class),
            TargetKind::Triangle => tri_target(gt, s, spec.eps_class),
        };
        let r_gate = rect_target(gt, s, spec.eps_reg);
        let r_star = Array2::from_shape_fn(gt.values.dim(), |idx| {
            if gt.valid[idx] {
                gt.values[idx] - s as f32
            } else {
                0.0
            }
        });
        let loss_mask =
            Mask::from_shape_fn(gt.values.dim(), |idx| padding_valid[idx] && gt.valid[idx]);
        Ok(Self { shift: s, c_star, r_star, r_gate, loss_mask })
    }
}

/// Rectangle target: 1 where `|D* - s| <= 0.5 + eps`, else 0. Invalid
/// ground-truth pixels get 0.
pub fn rect_target(gt: &DisparityMap, s: i32, eps: f32) -> Array2<f32> {
    Array2::from_shape_fn(gt.values.dim(), |idx| {
        if gt.valid[idx] && (gt.values[idx] - s as f32).abs() <= 0.5 + eps {
            1.0
        } else {
            0.0
        }
    })
}

/// Triangle target: `max(0.5 + eps - |D* - s|, 0)`.
pub fn tri_target(gt: &DisparityMap, s: i32, eps: f32) -> Array2<f32> {
    Array2::from_shape_fn(gt.values.dim(), |idx| {
        if gt.valid[idx] {
            (0.5 + eps - (gt.values[idx] - s as f32).abs()).max(0.0)
        } else {
            0.0
        }
    })
}

/// Per-pixel classification weight: `(D - D*)^2 + floor`, evaluated from the
/// fused prediction of the current forward pass and then treated as a
/// constant during optimization.
pub fn disp_weight(pred: &DisparityMap, gt: &DisparityMap, floor: f32) -> Result<Array2<f32>> {
    if pred.values.dim() != gt.values.dim() {
        return Err(Error::ShapeMismatch(format!(
            "pred {:?} vs gt {:?}",
            pred.values.dim(),
            gt.values.dim()
        )));
    }
    Ok(Array2::from_shape_fn(gt.values.dim(), |idx| {
        let d = pred.values[idx] - gt.values[idx];
        d * d + floor
    }))
}

fn check_per_shift_shapes(
    name: &str,
    maps: &[Array2<f32>],
    targets: &[Array2<f32>],
    masks: &[Mask],
    reference: (usize, usize),
) -> Result<()> {
    if maps.len() != targets.len() || maps.len() != masks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{name}: {} maps, {} targets, {} masks",
            maps.len(),
            targets.len(),
            masks.len()
        )));
    }
    for (i, ((m, t), k)) in maps.iter().zip(targets).zip(masks).enumerate() {
        if m.dim() != reference || t.dim() != reference || k.dim() != reference {
            return Err(Error::ShapeMismatch(format!(
                "{name}: shift {i} has shapes {:?}/{:?}/{:?}, expected {reference:?}",
                m.dim(),
                t.dim(),
                k.dim()
            )));
        }
    }
    Ok(())
}

/// Disparity-weighted squared classification loss, averaged over unmasked
/// pixels across all shifts. Masked pixels contribute nothing.
pub fn class_loss(
    c: &[Array2<f32>],
    c_star: &[Array2<f32>],
    w_disp: &Array2<f32>,
    masks: &[Mask],
) -> Result<f64> {
    if c.is_empty() {
        return Err(Error::ShapeMismatch("class_loss: no shifts".into()));
    }
    check_per_shift_shapes("class_loss", c, c_star, masks, w_disp.dim())?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for ((cs, ts), mask) in c.iter().zip(c_star).zip(masks) {
        for ((&cv, &tv), (&w, &m)) in
            cs.iter().zip(ts.iter()).zip(w_disp.iter().zip(mask.iter()))
        {
            if m {
                let d = (cv - tv) as f64;
                sum += d * d * w as f64;
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Gradient of [`class_loss`] with respect to each `C_s`.
pub fn class_loss_grad(
    c: &[Array2<f32>],
    c_star: &[Array2<f32>],
    w_disp: &Array2<f32>,
    masks: &[Mask],
) -> Result<Vec<Array2<f32>>> {
    check_per_shift_shapes("class_loss_grad", c, c_star, masks, w_disp.dim())?;
    let count: usize = masks.iter().map(|m| m.iter().filter(|&&v| v).count()).sum();
    let norm = if count == 0 { 0.0 } else { 1.0 / count as f32 };
    Ok(c
        .iter()
        .zip(c_star)
        .zip(masks)
        .map(|((cs, ts), mask)| {
            Array2::from_shape_fn(cs.dim(), |idx| {
                if mask[idx] {
                    2.0 * (cs[idx] - ts[idx]) * w_disp[idx] * norm
                } else {
                    0.0
                }
            })
        })
        .collect())
}

/// L1 regression loss `|R_s - (D* - s)|` over gated, unmasked pixels,
/// averaged over the gated pixel count.
pub fn reg_loss(
    r: &[Array2<f32>],
    gt: &DisparityMap,
    shifts: &[i32],
    r_gate: &[Array2<f32>],
    masks: &[Mask],
) -> Result<f64> {
    if r.len() != shifts.len() {
        return Err(Error::ShapeMismatch(format!(
            "reg_loss: {} maps vs {} shifts",
            r.len(),
            shifts.len()
        )));
    }
    check_per_shift_shapes("reg_loss", r, r_gate, masks, gt.values.dim())?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for ((rs, &s), (gate, mask)) in r.iter().zip(shifts).zip(r_gate.iter().zip(masks)) {
        for (idx, &rv) in rs.indexed_iter() {
            if mask[idx] && gate[idx] > 0.0 {
                let target = gt.values[idx] - s as f32;
                sum += ((rv - target).abs() * gate[idx]) as f64;
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Subgradient of [`reg_loss`] with respect to each `R_s` (zero at kinks).
pub fn reg_loss_grad(
    r: &[Array2<f32>],
    gt: &DisparityMap,
    shifts: &[i32],
    r_gate: &[Array2<f32>],
    masks: &[Mask],
) -> Result<Vec<Array2<f32>>> {
    check_per_shift_shapes("reg_loss_grad", r, r_gate, masks, gt.values.dim())?;
    let count: usize = r_gate
        .iter()
        .zip(masks)
        .map(|(g, m)| g.iter().zip(m.iter()).filter(|(&g, &m)| m && g > 0.0).count())
        .sum();
    let norm = if count == 0 { 0.0 } else { 1.0 / count as f32 };
    Ok(r
        .iter()
        .zip(shifts)
        .zip(r_gate.iter().zip(masks))
        .map(|((rs, &s), (gate, mask))| {
            Array2::from_shape_fn(rs.dim(), |idx| {
                if mask[idx] && gate[idx] > 0.0 {
                    let diff = rs[idx] - (gt.values[idx] - s as f32);
                    let sign = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    sign * gate[idx] * norm
                } else {
                    0.0
                }
            })
        })
        .collect())
}

/// Total loss `alpha * l_reg + l_class`.
pub fn total_loss(l_reg: f64, l_class: f64, alpha: f32) -> f64 {
    alpha as f64 * l_reg + l_class
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn gt_from(values: Array2<f32>) -> DisparityMap {
        DisparityMap::all_valid(values).unwrap()
    }

    fn full_mask(dim: (usize, usize)) -> Mask {
        Mask::from_elem(dim, true)
    }

    #[test]
    fn rect_target_matches_hand_evaluation() {
        let gt = gt_from(array![[1.6f32, 2.0, 3.0]]);
        let t = rect_target(&gt, 2, 0.17);
        assert_eq!(t[(0, 0)], 1.0); // |1.6-2| = 0.4 <= 0.67
        assert_eq!(t[(0, 1)], 1.0); // exact hit for any eps
        assert_eq!(t[(0, 2)], 0.0); // |3-2| = 1 > 0.67

        let t0 = rect_target(&gt, 0, 0.17);
        assert_eq!(t0[(0, 2)], 0.0); // |3-0| = 3 > 0.67
    }

    #[test]
    fn rect_boundary_is_inclusive() {
        let gt = gt_from(array![[0.67f32, 0.671]]);
        let t = rect_target(&gt, 0, 0.17);
        assert_eq!(t[(0, 0)], 1.0);
        assert_eq!(t[(0, 1)], 0.0);
    }

    #[test]
    fn invalid_gt_pixels_get_zero_target() {
        let mut gt = gt_from(array![[2.0f32, 2.0]]);
        gt.valid[(0, 1)] = false;
        let t = rect_target(&gt, 2, 0.1);
        assert_eq!(t[(0, 0)], 1.0);
        assert_eq!(t[(0, 1)], 0.0);
        let t = tri_target(&gt, 2, 0.1);
        assert_eq!(t[(0, 1)], 0.0);
    }

    #[test]
    fn tri_target_peak_foot_and_midpoint() {
        let eps = 0.25f32;
        let gt = gt_from(array![[2.0f32, 2.75, 1.25, 2.25]]);
        let t = tri_target(&gt, 2, eps);
        assert_eq!(t[(0, 0)], 0.5 + eps); // peak at D* = s
        assert_eq!(t[(0, 1)], 0.0); // foot at D* = s + 0.75
        assert_eq!(t[(0, 2)], 0.0); // foot at D* = s - 0.75
        assert_eq!(t[(0, 3)], 0.5); // max(0.75 - 0.25, 0)
    }

    #[test]
    fn rectangle_overlap_labels_two_shifts_near_half_integers() {
        // D* within eps of a half integer -> exactly two shifts labeled 1.
        let eps = 0.17f32;
        let gt = gt_from(array![[1.55f32]]);
        let labeled: Vec<i32> =
            (-1..=4).filter(|&s| rect_target(&gt, s, eps)[(0, 0)] == 1.0).collect();
        assert_eq!(labeled, vec![1, 2]);
        // Far from a half integer only one shift is labeled.
        let gt = gt_from(array![[2.0f32]]);
        let labeled: Vec<i32> =
            (-1..=4).filter(|&s| rect_target(&gt, s, eps)[(0, 0)] == 1.0).collect();
        assert_eq!(labeled, vec![2]);
    }

    #[test]
    fn triangle_adjacent_sums_bounded() {
        let eps = 0.25f32;
        for i in 0..200 {
            let d = -3.0 + i as f32 * 0.031;
            let gt = gt_from(array![[d]]);
            for s in -4..=4 {
                let sum = tri_target(&gt, s, eps)[(0, 0)] + tri_target(&gt, s + 1, eps)[(0, 0)];
                assert!(sum <= 1.0 + 2.0 * eps + 1e-6, "d={d} s={s} sum={sum}");
            }
        }
    }

    #[test]
    fn class_loss_hand_cases() {
        let gt_dim = (1, 1);
        let c = vec![array![[0.5f32]]];
        let c_star = vec![array![[1.0f32]]];
        let w = array![[4.0f32]];
        let masks = vec![full_mask(gt_dim)];
        let l = class_loss(&c, &c_star, &w, &masks).unwrap();
        assert!((l - 1.0).abs() < 1e-12); // 0.25 * 4

        // Perfect prediction.
        let l = class_loss(&c, &c.clone(), &w, &masks).unwrap();
        assert_eq!(l, 0.0);

        // Masked mismatch contributes nothing.
        let masks = vec![Mask::from_elem(gt_dim, false)];
        let l = class_loss(&c, &c_star, &w, &masks).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn class_loss_rejects_shape_mismatch() {
        let c = vec![array![[0.5f32, 0.5]]];
        let c_star = vec![array![[1.0f32]]];
        let w = array![[1.0f32]];
        let masks = vec![full_mask((1, 1))];
        assert!(class_loss(&c, &c_star, &w, &masks).is_err());
    }

    #[test]
    fn disp_weight_cases() {
        let gt = gt_from(array![[1.0f32, 2.0]]);
        let pred = gt_from(array![[1.0f32, 5.0]]);
        let w = disp_weight(&pred, &gt, 0.0).unwrap();
        assert_eq!(w[(0, 0)], 0.0);
        assert_eq!(w[(0, 1)], 9.0);
        let w = disp_weight(&pred, &gt, 0.05).unwrap();
        assert_eq!(w[(0, 0)], 0.05);
        assert_eq!(w[(0, 1)], 9.05);
    }

    #[test]
    fn reg_loss_hand_cases() {
        let gt = gt_from(array![[2.1f32, 4.0]]);
        let shifts = [2];
        // R_2 = 0.3 at a gated pixel whose target residual is 0.1.
        let r = vec![array![[0.3f32, 0.0]]];
        let gate = vec![rect_target(&gt, 2, 0.25)];
        assert_eq!(gate[0][(0, 0)], 1.0);
        assert_eq!(gate[0][(0, 1)], 0.0); // |4-2| outside the gate
        let masks = vec![full_mask((1, 2))];
        let l = reg_loss(&r, &gt, &shifts, &gate, &masks).unwrap();
        assert!((l - 0.2).abs() < 1e-6, "{l}");

        // Exact residuals everywhere -> zero.
        let r = vec![array![[0.1f32, 99.0]]];
        let l = reg_loss(&r, &gt, &shifts, &gate, &masks).unwrap();
        assert!(l.abs() < 1e-6);
    }

    #[test]
    fn total_loss_weighting() {
        assert_eq!(total_loss(1.0, 2.0, 2.5), 4.5);
        assert_eq!(total_loss(0.0, 2.0, 2.5), 2.0);
        let spec = TargetSpec::default();
        assert_eq!(spec.alpha, 2.5);
        assert_eq!(spec.eps_class, 0.17);
        assert!(spec.eps_reg > spec.eps_class);
    }

    #[test]
    fn losses_are_additive_over_disjoint_pixel_sets() {
        // Split a mask into two disjoint halves; the weighted sums (loss *
        // count) add up to the full-mask weighted sum.
        let gt = gt_from(array![[1.0f32, 2.0], [0.5, 1.5]]);
        let c = vec![array![[0.3f32, 0.9], [0.1, 0.6]]];
        let c_star = vec![rect_target(&gt, 1, 0.17)];
        let w = disp_weight(&gt_from(array![[1.2f32, 2.2], [0.4, 1.0]]), &gt, 0.0).unwrap();

        let full = vec![full_mask((2, 2))];
        let left = vec![Mask::from_shape_fn((2, 2), |(_, x)| x == 0)];
        let right = vec![Mask::from_shape_fn((2, 2), |(_, x)| x == 1)];

        let total = class_loss(&c, &c_star, &w, &full).unwrap() * 4.0;
        let a = class_loss(&c, &c_star, &w, &left).unwrap() * 2.0;
        let b = class_loss(&c, &c_star, &w, &right).unwrap() * 2.0;
        assert!((total - (a + b)).abs() < 1e-9);
    }

    #[test]
    fn shift_targets_builder_combines_masks() {
        let mut gt = gt_from(array![[1.0f32, 1.0, 5.0]]);
        gt.valid[(0, 1)] = false;
        let padding = Mask::from_shape_fn((1, 3), |(_, x)| x != 2);
        let t = ShiftTargets::build(&gt, 1, &TargetSpec::default(), &padding).unwrap();
        assert!(t.loss_mask[(0, 0)]);
        assert!(!t.loss_mask[(0, 1)]); // gt invalid
        assert!(!t.loss_mask[(0, 2)]); // padding invalid
        assert_eq!(t.r_star[(0, 0)], 0.0);
        assert_eq!(t.c_star[(0, 0)], 1.0);
        // Residual bound where the gate is open.
        for (idx, &g) in t.r_gate.indexed_iter() {
            if g > 0.0 {
                assert!(t.r_star[idx].abs() <= 0.5 + 0.25);
            }
        }
    }
}
