//! Low-level tensor operations for the network: 3x3 convolutions (stride 1
//! and 2) via im2col and a GEMM, their adjoints, reflect padding, and the
//! 90-degree feature rotations matching `epishift`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, Array4, LinalgScalar};

/// Element type of the network: f32 for training and inference, f64 for
/// gradient checks.
pub trait Scalar: LinalgScalar + PartialOrd + Send + Sync + std::fmt::Debug + std::fmt::Display {
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f32(self) -> f32;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;
    fn max(self, other: Self) -> Self;
}

impl Scalar for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f32(self) -> f32 {
        self
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn max(self, other: Self) -> Self {
        f32::max(self, other)
    }
}

impl Scalar for f64 {
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn max(self, other: Self) -> Self {
        f64::max(self, other)
    }
}

/// Output spatial size of a 3x3 convolution with padding 1.
pub fn conv_out_size(input: usize, stride: usize) -> usize {
    (input + 2 - 3) / stride + 1
}

/// im2col for kernel 3, padding 1: `(Cin*9, Ho*Wo)` with zeros outside.
fn im2col<F: Scalar>(x: &Array3<F>, stride: usize) -> Array2<F> {
    let (cin, h, w) = x.dim();
    let ho = conv_out_size(h, stride);
    let wo = conv_out_size(w, stride);
    let mut cols = Array2::zeros((cin * 9, ho * wo));
    for ci in 0..cin {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = ci * 9 + ky * 3 + kx;
                let mut out_row = cols.row_mut(row);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as i64 - 1;
                    if iy < 0 || iy >= h as i64 {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as i64 - 1;
                        if ix < 0 || ix >= w as i64 {
                            continue;
                        }
                        out_row[oy * wo + ox] = x[(ci, iy as usize, ix as usize)];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back into an image.
fn col2im<F: Scalar>(cols: &Array2<F>, cin: usize, hw: (usize, usize), stride: usize) -> Array3<F> {
    let (h, w) = hw;
    let ho = conv_out_size(h, stride);
    let wo = conv_out_size(w, stride);
    let mut x = Array3::zeros((cin, h, w));
    for ci in 0..cin {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = cols.row(ci * 9 + ky * 3 + kx);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as i64 - 1;
                    if iy < 0 || iy >= h as i64 {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as i64 - 1;
                        if ix < 0 || ix >= w as i64 {
                            continue;
                        }
                        x[(ci, iy as usize, ix as usize)] =
                            x[(ci, iy as usize, ix as usize)] + row[oy * wo + ox];
                    }
                }
            }
        }
    }
    x
}

/// 3x3 convolution, padding 1. Weight layout `(Cout, Cin, 3, 3)`.
pub fn conv2d_forward<F: Scalar>(
    x: &Array3<F>,
    w: &Array4<F>,
    b: Option<&Array1<F>>,
    stride: usize,
) -> Array3<F> {
    let (cin, h, win) = x.dim();
    let (cout, wcin, _, _) = w.dim();
    assert_eq!(cin, wcin, "conv input channels {cin} vs weight {wcin}");
    let ho = conv_out_size(h, stride);
    let wo = conv_out_size(win, stride);
    let cols = im2col(x, stride);
    let w2d = w.view().into_shape_with_order((cout, cin * 9)).expect("contiguous weight");
    let mut out2d = Array2::zeros((cout, ho * wo));
    general_mat_mul(F::one(), &w2d, &cols.view(), F::zero(), &mut out2d);
    if let Some(b) = b {
        for (mut row, &bias) in out2d.rows_mut().into_iter().zip(b.iter()) {
            row.mapv_inplace(|v| v + bias);
        }
    }
    out2d.into_shape_with_order((cout, ho, wo)).expect("sized above")
}

/// Gradient of [`conv2d_forward`] with respect to its input.
pub fn conv2d_backward_dx<F: Scalar>(
    dy: &Array3<F>,
    w: &Array4<F>,
    stride: usize,
    in_hw: (usize, usize),
) -> Array3<F> {
    let (cout, ho, wo) = dy.dim();
    let (wcout, cin, _, _) = w.dim();
    assert_eq!(cout, wcout);
    let w2d = w.view().into_shape_with_order((cout, cin * 9)).expect("contiguous weight");
    let dy2d = dy.view().into_shape_with_order((cout, ho * wo)).expect("contiguous grad");
    let mut dcols = Array2::zeros((cin * 9, ho * wo));
    general_mat_mul(F::one(), &w2d.t(), &dy2d, F::zero(), &mut dcols);
    col2im(&dcols, cin, in_hw, stride)
}

/// Gradient of [`conv2d_forward`] with respect to the weight.
pub fn conv2d_backward_dw<F: Scalar>(x: &Array3<F>, dy: &Array3<F>, stride: usize) -> Array4<F> {
    let (cin, _, _) = x.dim();
    let (cout, ho, wo) = dy.dim();
    let cols = im2col(x, stride);
    let dy2d = dy.view().into_shape_with_order((cout, ho * wo)).expect("contiguous grad");
    let mut dw2d = Array2::zeros((cout, cin * 9));
    general_mat_mul(F::one(), &dy2d, &cols.t(), F::zero(), &mut dw2d);
    dw2d.into_shape_with_order((cout, cin, 3, 3)).expect("sized above")
}

/// Per-channel spatial sums (bias gradient).
pub fn channel_sums<F: Scalar>(dy: &Array3<F>) -> Array1<F> {
    let (c, _, _) = dy.dim();
    let mut out = Array1::zeros(c);
    for ci in 0..c {
        let mut acc = F::zero();
        for v in dy.index_axis(ndarray::Axis(0), ci).iter() {
            acc = acc + *v;
        }
        out[ci] = acc;
    }
    out
}

/// Transposed 3x3 convolution with stride 2 that exactly doubles the spatial
/// size. Weight layout `(Cin, Cout, 3, 3)`. Defined as the adjoint of the
/// stride-2 convolution, so output pixel `o` receives `x[i] * w[k]` whenever
/// `o = 2*i - 1 + k`.
pub fn convt2d_forward<F: Scalar>(x: &Array3<F>, w: &Array4<F>, b: &Array1<F>) -> Array3<F> {
    let (cin, h, win) = x.dim();
    let (wcin, cout, _, _) = w.dim();
    assert_eq!(cin, wcin, "convT input channels {cin} vs weight {wcin}");
    let mut y = conv2d_backward_dx(x, w, 2, (2 * h, 2 * win));
    debug_assert_eq!(y.dim().0, cout);
    for co in 0..cout {
        let bias = b[co];
        y.index_axis_mut(ndarray::Axis(0), co).mapv_inplace(|v| v + bias);
    }
    y
}

/// Gradient of [`convt2d_forward`] with respect to its input.
pub fn convt2d_backward_dx<F: Scalar>(dy: &Array3<F>, w: &Array4<F>) -> Array3<F> {
    conv2d_forward(dy, w, None, 2)
}

/// Gradient of [`convt2d_forward`] with respect to the weight.
pub fn convt2d_backward_dw<F: Scalar>(x: &Array3<F>, dy: &Array3<F>) -> Array4<F> {
    // Roles swap relative to the forward convolution: the fine-grid tensor
    // (dy) acts as the conv input, the coarse-grid tensor (x) as its output.
    conv2d_backward_dw(dy, x, 2)
}

/// ReLU and its backward mask (`y > 0`, which equals `x > 0` for `y = relu(x)`).
pub fn relu<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu_backward<F: Scalar>(dy: &Array3<F>, y: &Array3<F>) -> Array3<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

/// Reflect-pads the bottom and right edges (mirror without repeating the
/// border pixel) so both spatial dimensions are multiples of `multiple`.
/// Returns the padded tensor and the amount added per axis.
pub fn reflect_pad_to_multiple<F: Scalar>(
    x: &Array3<F>,
    multiple: usize,
) -> (Array3<F>, (usize, usize)) {
    let (c, h, w) = x.dim();
    let pad_h = (multiple - h % multiple) % multiple;
    let pad_w = (multiple - w % multiple) % multiple;
    if pad_h == 0 && pad_w == 0 {
        return (x.clone(), (0, 0));
    }
    let mirror = |i: usize, n: usize| -> usize {
        if i < n {
            i
        } else {
            let m = 2 * n as i64 - 2 - i as i64;
            m.clamp(0, n as i64 - 1) as usize
        }
    };
    let out = Array3::from_shape_fn((c, h + pad_h, w + pad_w), |(ci, y, xx)| {
        x[(ci, mirror(y, h), mirror(xx, w))]
    });
    (out, (pad_h, pad_w))
}

/// Adjoint of [`reflect_pad_to_multiple`]: folds gradients from padded
/// positions back onto their mirror sources.
pub fn reflect_pad_backward<F: Scalar>(dy: &Array3<F>, orig_hw: (usize, usize)) -> Array3<F> {
    let (c, hp, wp) = dy.dim();
    let (h, w) = orig_hw;
    let mirror = |i: usize, n: usize| -> usize {
        if i < n {
            i
        } else {
            let m = 2 * n as i64 - 2 - i as i64;
            m.clamp(0, n as i64 - 1) as usize
        }
    };
    let mut dx = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..hp {
            let sy = mirror(y, h);
            for x in 0..wp {
                let sx = mirror(x, w);
                dx[(ci, sy, sx)] = dx[(ci, sy, sx)] + dy[(ci, y, x)];
            }
        }
    }
    dx
}

/// Crops to the top-left `(h, w)` corner.
pub fn crop<F: Scalar>(x: &Array3<F>, h: usize, w: usize) -> Array3<F> {
    x.slice(ndarray::s![.., ..h, ..w]).to_owned()
}

/// Adjoint of [`crop`]: embeds into a zero tensor of the padded size.
pub fn crop_backward<F: Scalar>(dy: &Array3<F>, padded_hw: (usize, usize)) -> Array3<F> {
    let (c, h, w) = dy.dim();
    let mut dx = Array3::zeros((c, padded_hw.0, padded_hw.1));
    dx.slice_mut(ndarray::s![.., ..h, ..w]).assign(dy);
    dx
}

/// 90-degree counter-clockwise rotation of a channel-major tensor.
pub fn rotate_ccw_chw<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, w, h), |(ch, yp, xp)| x[(ch, xp, w - 1 - yp)])
}

/// 90-degree clockwise rotation; inverse of [`rotate_ccw_chw`].
pub fn rotate_cw_chw<F: Scalar>(x: &Array3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, w, h), |(ch, yp, xp)| x[(ch, h - 1 - xp, yp)])
}
