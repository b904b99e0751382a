//! Convolutional primitives with hand-written forward and backward passes.
//!
//! Everything runs in f64 with fixed reduction order. Parallel loops split
//! over disjoint output slices only, so results are bit-stable across runs
//! regardless of the worker count.

use ndarray::{Array1, Array2, Array3, Array4, Axis};

/// Lower a padded image into the (ci*9, h*w) patch matrix for GEMM-based
/// convolution. Row c*9 + ky*3 + kx holds x[c, y+ky-1, x+kx-1] (zero
/// outside the image) for every output pixel, column-major in (y, x).
fn im2col(x: &Array3<f64>) -> Array2<f64> {
    let (ci, h, w) = x.dim();
    let xs = x.as_slice().expect("standard layout");
    let mut cols = Array2::zeros((ci * 9, h * w));
    for c in 0..ci {
        let xc = &xs[c * h * w..(c + 1) * h * w];
        for ky in 0..3usize {
            let dy = ky as isize - 1;
            for kx in 0..3usize {
                let dx = kx as isize - 1;
                let mut row = cols.row_mut(c * 9 + ky * 3 + kx);
                let rs = row.as_slice_mut().expect("contiguous row");
                let y0 = (-dy).max(0) as usize;
                let y1 = (h as isize - dy).min(h as isize) as usize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                for yy in y0..y1 {
                    let sy = (yy as isize + dy) as usize;
                    let s0 = (x0 as isize + dx) as usize;
                    let src = &xc[sy * w + s0..sy * w + s0 + (x1 - x0)];
                    rs[yy * w + x0..yy * w + x1].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

/// Adjoint of `im2col`: scatter-add patch-matrix gradients back onto the
/// image grid.
fn col2im(cols: &Array2<f64>, ci: usize, h: usize, w: usize) -> Array3<f64> {
    let mut gx = Array3::zeros((ci, h, w));
    let gs = gx.as_slice_mut().expect("standard layout");
    for c in 0..ci {
        let gxc = &mut gs[c * h * w..(c + 1) * h * w];
        for ky in 0..3usize {
            let dy = ky as isize - 1;
            for kx in 0..3usize {
                let dx = kx as isize - 1;
                let row = cols.row(c * 9 + ky * 3 + kx);
                let rs = row.as_slice().expect("contiguous row");
                let y0 = (-dy).max(0) as usize;
                let y1 = (h as isize - dy).min(h as isize) as usize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                for yy in y0..y1 {
                    let sy = (yy as isize + dy) as usize;
                    let s0 = (x0 as isize + dx) as usize;
                    let dst = &mut gxc[sy * w + s0..sy * w + s0 + (x1 - x0)];
                    for (d, &g) in dst.iter_mut().zip(&rs[yy * w + x0..yy * w + x1]) {
                        *d += g;
                    }
                }
            }
        }
    }
    gx
}

/// 3x3 convolution, stride 1, zero padding 1. Weights are (out, in, 3, 3).
/// Implemented as im2col + GEMM; single-threaded and deterministic.
pub fn conv3x3_forward(x: &Array3<f64>, w: &Array4<f64>, b: &Array1<f64>) -> Array3<f64> {
    let (ci, h, wd) = x.dim();
    let co = w.dim().0;
    debug_assert_eq!(w.dim().1, ci);
    let cols = im2col(x);
    let w_mat = w.view().into_shape((co, ci * 9)).expect("contiguous weights");
    let mut y_mat = w_mat.dot(&cols);
    for (o, mut row) in y_mat.axis_iter_mut(Axis(0)).enumerate() {
        row += b[o];
    }
    y_mat.into_shape((co, h, wd)).expect("exact size")
}

/// Backward pass of conv3x3_forward. Returns (grad_x, grad_w, grad_b).
pub fn conv3x3_backward(
    x: &Array3<f64>,
    w: &Array4<f64>,
    gy: &Array3<f64>,
) -> (Array3<f64>, Array4<f64>, Array1<f64>) {
    let (ci, h, wd) = x.dim();
    let co = w.dim().0;
    let cols = im2col(x);
    let gy_mat = gy.view().into_shape((co, h * wd)).expect("contiguous grad");
    let gb = Array1::from_iter(gy_mat.axis_iter(Axis(0)).map(|r| r.sum()));
    let gw = gy_mat
        .dot(&cols.t())
        .into_shape((co, ci, 3, 3))
        .expect("exact size");
    let w_mat = w.view().into_shape((co, ci * 9)).expect("contiguous weights");
    let gcols = w_mat.t().dot(&gy_mat);
    let gx = col2im(&gcols, ci, h, wd);
    (gx, gw, gb)
}

/// Pointwise (1x1) convolution. Weights are (out, in).
pub fn conv1x1_forward(x: &Array3<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array3<f64> {
    let (ci, h, wd) = x.dim();
    let co = w.dim().0;
    let x_mat = x.view().into_shape((ci, h * wd)).expect("contiguous input");
    let mut y_mat = w.dot(&x_mat);
    for (o, mut row) in y_mat.axis_iter_mut(Axis(0)).enumerate() {
        row += b[o];
    }
    y_mat.into_shape((co, h, wd)).expect("exact size")
}

pub fn conv1x1_backward(
    x: &Array3<f64>,
    w: &Array2<f64>,
    gy: &Array3<f64>,
) -> (Array3<f64>, Array2<f64>, Array1<f64>) {
    let (ci, h, wd) = x.dim();
    let co = w.dim().0;
    let x_mat = x.view().into_shape((ci, h * wd)).expect("contiguous input");
    let gy_mat = gy.view().into_shape((co, h * wd)).expect("contiguous grad");
    let gb = Array1::from_iter(gy_mat.axis_iter(Axis(0)).map(|r| r.sum()));
    let gw = gy_mat.dot(&x_mat.t());
    let gx = w.t().dot(&gy_mat).into_shape((ci, h, wd)).expect("exact size");
    (gx, gw, gb)
}

pub fn relu_forward(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through relu given the pre-activation input.
pub fn relu_backward(x: &Array3<f64>, gy: &Array3<f64>) -> Array3<f64> {
    let mut gx = gy.clone();
    gx.zip_mut_with(x, |g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    gx
}

/// 2x2 average pooling, stride 2.
pub fn avgpool2_forward(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, h / 2, w / 2));
    for ch in 0..c {
        for yy in 0..h / 2 {
            for xx in 0..w / 2 {
                y[(ch, yy, xx)] = (x[(ch, 2 * yy, 2 * xx)]
                    + x[(ch, 2 * yy, 2 * xx + 1)]
                    + x[(ch, 2 * yy + 1, 2 * xx)]
                    + x[(ch, 2 * yy + 1, 2 * xx + 1)])
                    / 4.0;
            }
        }
    }
    y
}

pub fn avgpool2_backward(gy: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = gy.dim();
    let mut gx = Array3::zeros((c, h * 2, w * 2));
    for ch in 0..c {
        for yy in 0..h {
            for xx in 0..w {
                let g = gy[(ch, yy, xx)] / 4.0;
                gx[(ch, 2 * yy, 2 * xx)] = g;
                gx[(ch, 2 * yy, 2 * xx + 1)] = g;
                gx[(ch, 2 * yy + 1, 2 * xx)] = g;
                gx[(ch, 2 * yy + 1, 2 * xx + 1)] = g;
            }
        }
    }
    gx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2_forward(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, h * 2, w * 2));
    for ch in 0..c {
        for yy in 0..h {
            for xx in 0..w {
                let v = x[(ch, yy, xx)];
                y[(ch, 2 * yy, 2 * xx)] = v;
                y[(ch, 2 * yy, 2 * xx + 1)] = v;
                y[(ch, 2 * yy + 1, 2 * xx)] = v;
                y[(ch, 2 * yy + 1, 2 * xx + 1)] = v;
            }
        }
    }
    y
}

pub fn upsample2_backward(gy: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = gy.dim();
    let mut gx = Array3::zeros((c, h / 2, w / 2));
    for ch in 0..c {
        for yy in 0..h / 2 {
            for xx in 0..w / 2 {
                gx[(ch, yy, xx)] = gy[(ch, 2 * yy, 2 * xx)]
                    + gy[(ch, 2 * yy, 2 * xx + 1)]
                    + gy[(ch, 2 * yy + 1, 2 * xx)]
                    + gy[(ch, 2 * yy + 1, 2 * xx + 1)];
            }
        }
    }
    gx
}

pub fn sigmoid_forward(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Gradient through sigmoid given the sigmoid output.
pub fn sigmoid_backward(y: &Array3<f64>, gy: &Array3<f64>) -> Array3<f64> {
    let mut gx = gy.clone();
    gx.zip_mut_with(y, |g, &s| *g *= s * (1.0 - s));
    gx
}

/// Channel-wise concatenation of two activation maps.
pub fn concat_channels(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("matching spatial dims")
}

/// Split a gradient back over the two concatenated inputs.
pub fn split_channels(g: &Array3<f64>, first: usize) -> (Array3<f64>, Array3<f64>) {
    let ga = g.slice(ndarray::s![..first, .., ..]).to_owned();
    let gb = g.slice(ndarray::s![first.., .., ..]).to_owned();
    (ga, gb)
}
