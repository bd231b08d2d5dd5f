//! Forward and backward kernels. Convolutions go through im2col + GEMM.

use alloc::vec;
use alloc::vec::Vec;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Gradients of a convolution-like operator with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub fn transpose_conv_output_size(
    size: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if stride == 0 || kernel == 0 || size == 0 {
        return None;
    }
    ((size - 1) * stride + kernel)
        .checked_sub(2 * padding)
        .filter(|&s| s > 0)
}

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Maps output coordinate + kernel offset to an input coordinate, or
    /// `None` when it lands in the zero padding.
    #[inline]
    fn source(&self, out: usize, k: usize, limit: usize) -> Option<usize> {
        (out * self.stride + k)
            .checked_sub(self.padding)
            .filter(|&p| p < limit)
    }
}

fn im2col<T: Real>(input: &[T], g: &Geometry) -> Vec<T> {
    let cols = g.cols();
    let mut out = vec![T::zero(); g.rows() * cols];
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ki, g.height) else {
                        continue;
                    };
                    let src_row = &plane[iy * g.width..(iy + 1) * g.width];
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        if let Some(ix) = g.source(ox, kj, g.width) {
                            *d = src_row[ix];
                        }
                    }
                }
            }
        }
    }
    out
}

fn col2im<T: Real>(cols_buf: &[T], g: &Geometry) -> Vec<T> {
    let cols = g.cols();
    let mut out = vec![T::zero(); g.channels * g.height * g.width];
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols_buf[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ki, g.height) else {
                        continue;
                    };
                    let src_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    let dst_row = &mut plane[iy * g.width..(iy + 1) * g.width];
                    for (ox, &s) in src_row.iter().enumerate() {
                        if let Some(ix) = g.source(ox, kj, g.width) {
                            dst_row[ix] += s;
                        }
                    }
                }
            }
        }
    }
    out
}

fn expect_rank<T: Real>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::Contract(alloc::format!(
            "{op}: expected rank-{rank} tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn conv_geometry<T: Real>(
    op: &'static str,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    expect_rank(op, input, 3)?;
    expect_rank(op, kernel, 4)?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let k = kernel.shape();
    if k[1] != c {
        return Err(Error::dim(op, &[k[0], c, k[2], k[3]], k));
    }
    if bias.shape() != [k[0]] {
        return Err(Error::dim(op, &[k[0]], bias.shape()));
    }
    if stride == 0 {
        return Err(Error::Contract(alloc::format!("{op}: stride must be ≥ 1")));
    }
    let (Some(out_h), Some(out_w)) = (
        conv_output_size(h, k[2], stride, padding),
        conv_output_size(w, k[3], stride, padding),
    ) else {
        return Err(Error::dim(op, &[h + 2 * padding, w + 2 * padding], &k[2..]));
    };
    Ok(Geometry {
        channels: c,
        height: h,
        width: w,
        kh: k[2],
        kw: k[3],
        stride,
        padding,
        out_h,
        out_w,
    })
}

/// `input[C_in,H,W]`, `kernel[C_out,C_in,kH,kW]`, `bias[C_out]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry("conv2d", input, kernel, bias, stride, padding)?;
    let c_out = kernel.shape()[0];
    let cols = im2col(input.data(), &g);
    let n = g.cols();
    let mut out = Vec::with_capacity(c_out * n);
    for &b in bias.data() {
        out.extend(core::iter::repeat_n(b, n));
    }
    T::gemm(c_out, g.rows(), n, kernel.data(), false, &cols, false, &mut out, true);
    Ok(Tensor::from_parts(vec![c_out, g.out_h, g.out_w], out))
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let c_out = kernel.shape().first().copied().unwrap_or(0);
    let bias = Tensor::zeros([c_out.max(1)]);
    let g = conv_geometry("conv2d_backward", input, kernel, &bias, stride, padding)?;
    if grad_out.shape() != [c_out, g.out_h, g.out_w] {
        return Err(Error::dim("conv2d_backward", &[c_out, g.out_h, g.out_w], grad_out.shape()));
    }
    let n = g.cols();
    let cols = im2col(input.data(), &g);
    let mut dk = vec![T::zero(); c_out * g.rows()];
    T::gemm(c_out, n, g.rows(), grad_out.data(), false, &cols, true, &mut dk, false);
    let db = grad_out.data().chunks(n).map(|ch| ch.iter().copied().sum()).collect();
    let input_grad = if need_input {
        let mut dcols = vec![T::zero(); g.rows() * n];
        T::gemm(g.rows(), c_out, n, kernel.data(), true, grad_out.data(), false, &mut dcols, false);
        Some(Tensor::from_parts(input.shape().to_vec(), col2im(&dcols, &g)))
    } else {
        None
    };
    Ok(ConvGrads {
        input: input_grad,
        kernel: Tensor::from_parts(kernel.shape().to_vec(), dk),
        bias: Tensor::from_parts(vec![c_out], db),
    })
}

/// Geometry of the convolution whose adjoint a transposed convolution is:
/// the "input" of that convolution is this operator's output.
fn transpose_geometry<T: Real>(
    op: &'static str,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    expect_rank(op, input, 3)?;
    expect_rank(op, kernel, 4)?;
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let k = kernel.shape();
    if k[0] != c_in {
        return Err(Error::dim(op, &[c_in, k[1], k[2], k[3]], k));
    }
    if bias.shape() != [k[1]] {
        return Err(Error::dim(op, &[k[1]], bias.shape()));
    }
    if stride == 0 {
        return Err(Error::Contract(alloc::format!("{op}: stride must be ≥ 1")));
    }
    let (Some(out_h), Some(out_w)) = (
        transpose_conv_output_size(h, k[2], stride, padding),
        transpose_conv_output_size(w, k[3], stride, padding),
    ) else {
        return Err(Error::dim(op, &[h, w], &k[2..]));
    };
    Ok(Geometry {
        channels: k[1],
        height: out_h,
        width: out_w,
        kh: k[2],
        kw: k[3],
        stride,
        padding,
        out_h: h,
        out_w: w,
    })
}

/// Adjoint of [`conv2d`]: `input[C_in,H,W]`, `kernel[C_in,C_out,kH,kW]`,
/// `bias[C_out]`, output side `(H−1)·stride − 2·padding + kH`.
pub fn transpose_conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = transpose_geometry("transpose_conv2d", input, kernel, bias, stride, padding)?;
    let c_in = input.shape()[0];
    let n = g.cols();
    let mut cols = vec![T::zero(); g.rows() * n];
    T::gemm(g.rows(), c_in, n, kernel.data(), true, input.data(), false, &mut cols, false);
    let mut out = col2im(&cols, &g);
    let plane = g.height * g.width;
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.data()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
    Ok(Tensor::from_parts(vec![g.channels, g.height, g.width], out))
}

pub fn transpose_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let c_out = kernel.shape().get(1).copied().unwrap_or(0);
    let bias = Tensor::zeros([c_out.max(1)]);
    let g = transpose_geometry("transpose_conv2d_backward", input, kernel, &bias, stride, padding)?;
    if grad_out.shape() != [g.channels, g.height, g.width] {
        return Err(Error::dim(
            "transpose_conv2d_backward",
            &[g.channels, g.height, g.width],
            grad_out.shape(),
        ));
    }
    let c_in = input.shape()[0];
    let n = g.cols();
    let dcols = im2col(grad_out.data(), &g);
    let mut dk = vec![T::zero(); c_in * g.rows()];
    T::gemm(c_in, n, g.rows(), input.data(), false, &dcols, true, &mut dk, false);
    let plane = g.height * g.width;
    let db = grad_out.data().chunks(plane).map(|ch| ch.iter().copied().sum()).collect();
    let input_grad = if need_input {
        let mut dx = vec![T::zero(); c_in * n];
        T::gemm(c_in, g.rows(), n, kernel.data(), false, &dcols, false, &mut dx, false);
        Some(Tensor::from_parts(input.shape().to_vec(), dx))
    } else {
        None
    };
    Ok(ConvGrads {
        input: input_grad,
        kernel: Tensor::from_parts(kernel.shape().to_vec(), dk),
        bias: Tensor::from_parts(vec![g.channels], db),
    })
}

/// `weight[out,in] · input + bias`; the input may have any shape with `in` elements.
pub fn dense<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("dense", weight, 2)?;
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    if input.len() != in_dim {
        return Err(Error::dim("dense", &[in_dim], &[input.len()]));
    }
    if bias.shape() != [out_dim] {
        return Err(Error::dim("dense", &[out_dim], bias.shape()));
    }
    let mut out = bias.data().to_vec();
    T::gemm(out_dim, in_dim, 1, weight.data(), false, input.data(), false, &mut out, true);
    Ok(Tensor::from_parts(vec![out_dim], out))
}

/// Returns `(d_input, d_weight, d_bias)`; `d_input` keeps the input's shape.
pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    expect_rank("dense_backward", weight, 2)?;
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    if input.len() != in_dim || grad_out.len() != out_dim {
        return Err(Error::dim("dense_backward", &[in_dim, out_dim], &[input.len(), grad_out.len()]));
    }
    let mut dw = vec![T::zero(); out_dim * in_dim];
    T::gemm(out_dim, 1, in_dim, grad_out.data(), false, input.data(), false, &mut dw, false);
    let mut dx = vec![T::zero(); in_dim];
    T::gemm(in_dim, out_dim, 1, weight.data(), true, grad_out.data(), false, &mut dx, false);
    Ok((
        Tensor::from_parts(input.shape().to_vec(), dx),
        Tensor::from_parts(weight.shape().to_vec(), dw),
        Tensor::from_parts(vec![out_dim], grad_out.data().to_vec()),
    ))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Takes the forward *output* `y = sigmoid(x)`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::from_parts(y.shape().to_vec(), data)
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dim("add", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

/// Mean of squared differences, accumulated in f64.
pub fn mse<T: Real>(input: &Tensor<T>, output: &Tensor<T>) -> Result<f64> {
    if input.shape() != output.shape() {
        return Err(Error::dim("mse", input.shape(), output.shape()));
    }
    let sum: f64 = input
        .data()
        .iter()
        .zip(output.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(sum / input.len() as f64)
}

/// Gradient of `mse(a, b)` with respect to `a` (negate for `b`).
pub fn mse_backward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, grad_out: T) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dim("mse_backward", a.shape(), b.shape()));
    }
    let scale = grad_out * T::lit(2.0 / a.len() as f64);
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * scale).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}
