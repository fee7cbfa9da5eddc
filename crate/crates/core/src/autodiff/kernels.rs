//! Raw slice kernels shared by the eager layer functions and the tape.
//!
//! Convolutions are lowered to matrix products through an im2col buffer.
//! Inputs are channels-last, `(n, h, w, d, c)`, and kernels are stored
//! `(f, kh, kw, kd, c)`, so that for a fixed `(kh, kw)` offset the window over
//! `(d, c)` is one contiguous run in both the input and the kernel.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

/// Geometry of a valid, stride-1 convolution over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub kd: usize,
    pub f: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }
    pub fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }
    pub fn out_d(&self) -> usize {
        self.d - self.kd + 1
    }
    /// Rows of the im2col matrix: one per output position.
    pub fn rows(&self) -> usize {
        self.n * self.out_h() * self.out_w() * self.out_d()
    }
    /// Columns of the im2col matrix: one per kernel tap.
    pub fn taps(&self) -> usize {
        self.kh * self.kw * self.kd * self.c
    }
    pub fn input_len(&self) -> usize {
        self.n * self.h * self.w * self.d * self.c
    }
}

pub(crate) fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow, od) = (g.out_h(), g.out_w(), g.out_d());
    let taps = g.taps();
    let run = g.kd * g.c;
    let mut cols = Vec::with_capacity(g.rows() * taps);
    for b in 0..g.n {
        for i in 0..oh {
            for j in 0..ow {
                for k in 0..od {
                    for a in 0..g.kh {
                        for e in 0..g.kw {
                            let src = (((b * g.h + i + a) * g.w + j + e) * g.d + k) * g.c;
                            cols.extend_from_slice(&input[src..src + run]);
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let (oh, ow, od) = (g.out_h(), g.out_w(), g.out_d());
    let taps = g.taps();
    let run = g.kd * g.c;
    let mut row = 0;
    for b in 0..g.n {
        for i in 0..oh {
            for j in 0..ow {
                for k in 0..od {
                    let src_row = &cols[row * taps..(row + 1) * taps];
                    for a in 0..g.kh {
                        for e in 0..g.kw {
                            let dst = (((b * g.h + i + a) * g.w + j + e) * g.d + k) * g.c;
                            let src = (a * g.kw + e) * run;
                            out[dst..dst + run].iter_mut().zip(&src_row[src..src + run]).for_each(|(o, v)| *o += v);
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("buffer sized by caller")
}

fn view_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("buffer sized by caller")
}

/// Row counts up to which `a · bᵀ` is done with direct dot products;
/// packing `b` for the blocked product costs more than it saves there.
const DIRECT_ROWS: usize = 4;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// `out (rows × cols_b) += a (rows × inner) · bᵀ` with `b` stored
/// `(cols_b, inner)`.
fn add_mul_transposed(a: &[f64], rows: usize, b: &[f64], cols_b: usize, inner: usize, out: &mut [f64]) {
    if rows <= DIRECT_ROWS {
        for (a_row, out_row) in a.chunks_exact(inner).zip(out.chunks_exact_mut(cols_b)) {
            for (o, b_row) in out_row.iter_mut().zip(b.chunks_exact(inner)) {
                *o += dot(a_row, b_row);
            }
        }
        return;
    }
    general_mat_mul(1.0, &view(a, rows, inner), &view(b, cols_b, inner).t(), 1.0, &mut view_mut(out, rows, cols_b));
}

/// `out (rows × f) = cols · Wᵀ + bias`, output laid out `(n, oh, ow, od, f)`.
pub(crate) fn conv_forward(input: &[f64], weights: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    conv_forward_cols(&im2col(input, g), weights, bias, g)
}

/// [`conv_forward`] from a prebuilt im2col buffer.
pub(crate) fn conv_forward_cols(cols: &[f64], weights: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let rows = g.rows();
    let mut out = Vec::with_capacity(rows * g.f);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    add_mul_transposed(cols, rows, weights, g.f, g.taps(), &mut out);
    out
}

/// Gradients of [`conv_forward`] with respect to input, weights and bias,
/// given the forward im2col buffer. The input gradient is skipped unless
/// `want_input`.
pub(crate) fn conv_backward(
    cols: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    g: &ConvGeom,
    want_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let rows = g.rows();
    let taps = g.taps();
    let dout = view(grad_out, rows, g.f);

    let mut dw = vec![0.0; g.f * taps];
    general_mat_mul(1.0, &dout.t(), &view(cols, rows, taps), 0.0, &mut view_mut(&mut dw, g.f, taps));

    let mut db = vec![0.0; g.f];
    for r in grad_out.chunks_exact(g.f) {
        db.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }

    if !want_input {
        return (None, dw, db);
    }
    let mut dcols = vec![0.0; rows * taps];
    general_mat_mul(1.0, &dout, &view(weights, g.f, taps), 0.0, &mut view_mut(&mut dcols, rows, taps));
    let mut dinput = vec![0.0; g.input_len()];
    col2im_add(&dcols, g, &mut dinput);
    (Some(dinput), dw, db)
}

/// `y (n × out) = x · Wᵀ + b` with `W` stored `(out, in)`.
pub(crate) fn dense_forward(
    x: &[f64],
    n: usize,
    weights: &[f64],
    bias: &[f64],
    fan_in: usize,
    fan_out: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * fan_out);
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    add_mul_transposed(x, n, weights, fan_out, fan_in, &mut out);
    out
}

pub(crate) fn dense_backward(
    x: &[f64],
    n: usize,
    weights: &[f64],
    grad_out: &[f64],
    fan_in: usize,
    fan_out: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dy = view(grad_out, n, fan_out);
    let mut dx = vec![0.0; n * fan_in];
    general_mat_mul(1.0, &dy, &view(weights, fan_out, fan_in), 0.0, &mut view_mut(&mut dx, n, fan_in));
    let mut dw = vec![0.0; fan_out * fan_in];
    general_mat_mul(1.0, &dy.t(), &view(x, n, fan_in), 0.0, &mut view_mut(&mut dw, fan_out, fan_in));
    let mut db = vec![0.0; fan_out];
    for r in grad_out.chunks_exact(fan_out) {
        db.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    (dx, dw, db)
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut sum = 0.0;
        for &z in row {
            let e = (z - max).exp();
            sum += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|p| *p /= sum);
    }
    out
}

/// Per-row `-log softmax(z)[label]`.
///
/// Written as `(max - z[label]) + ln_1p(sum of the other exp(z - max))` so
/// that a confident correct prediction still yields a strictly positive loss.
pub(crate) fn nll_rows(logits: &[f64], classes: usize, labels: &[usize]) -> Vec<f64> {
    logits
        .chunks_exact(classes)
        .zip(labels)
        .map(|(row, &y)| {
            let (top, max) =
                row.iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, z)| if z > acc.1 { (i, z) } else { acc });
            let rest: f64 = row.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, z)| (z - max).exp()).sum();
            (max - row[y]) + rest.ln_1p()
        })
        .collect()
}
