//! Convolution as cross-correlation (no kernel flip) via im2col + GEMM.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Output extent `(n + 2p - k) / stride + 1`, rejecting non-integral results.
pub fn conv_output_extent(n: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || k == 0 {
        return Err(Error::dim("kernel size and stride must be positive"));
    }
    let padded = n + 2 * padding;
    if padded < k {
        return Err(Error::dim(format!("kernel {k} larger than padded extent {padded}")));
    }
    if (padded - k) % stride != 0 {
        return Err(Error::dim(format!(
            "non-integral output extent: ({n} + 2·{padding} − {k}) / {stride}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Unfolds a `B×C×H×W` batch into a `(C·k·k) × (B·H'·W')` matrix.
pub fn im2col<T: Scalar>(input: &Tensor<T>, k: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = input.dims4()?;
    let oh = conv_output_extent(h, k, stride, padding)?;
    let ow = conv_output_extent(w, k, stride, padding)?;
    let ncols = b * oh * ow;
    let mut cols = vec![T::zero(); c * k * k * ncols];
    let x = input.data();
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for bi in 0..b {
                    let plane = &x[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        let out_row = &mut dst[(bi * oh + oy) * ow..(bi * oh + oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c * k * k, ncols], cols)
}

/// Adjoint of [`im2col`]: scatters-adds columns back into a `B×C×H×W` tensor.
pub fn col2im<T: Scalar>(
    cols: &Tensor<T>,
    input_shape: [usize; 4],
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [b, c, h, w] = input_shape;
    let oh = conv_output_extent(h, k, stride, padding)?;
    let ow = conv_output_extent(w, k, stride, padding)?;
    let ncols = b * oh * ow;
    if cols.shape() != [c * k * k, ncols] {
        return Err(Error::dim(format!(
            "col2im: columns {:?} do not match input {:?}",
            cols.shape(),
            input_shape
        )));
    }
    let mut out = vec![T::zero(); b * c * h * w];
    let src = cols.data();
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let col_row = &src[row * ncols..(row + 1) * ncols];
                for bi in 0..b {
                    let plane = &mut out[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let vals = &col_row[(bi * oh + oy) * ow..(bi * oh + oy + 1) * ow];
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &v) in vals.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&input_shape, out)
}

/// Batched convolution kernel shared with the `nn` layer. Returns the output
/// and the unfolded columns (kept by the layer for its backward pass).
pub(crate) fn conv2d_batch<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, c_in, h, w) = input.dims4()?;
    let (c_out, wc, k, k2) = weight.dims4()?;
    if wc != c_in || k != k2 {
        return Err(Error::dim(format!(
            "conv weight {:?} incompatible with input {:?}",
            weight.shape(),
            input.shape()
        )));
    }
    if bias.shape() != [c_out] {
        return Err(Error::dim(format!("conv bias {:?}, expected [{c_out}]", bias.shape())));
    }
    let oh = conv_output_extent(h, k, stride, padding)?;
    let ow = conv_output_extent(w, k, stride, padding)?;
    let cols = im2col(input, k, stride, padding)?;
    let ncols = b * oh * ow;
    let kk = c_in * k * k;
    // [c_out × kk] · [kk × ncols]
    let mut prod = vec![T::zero(); c_out * ncols];
    T::gemm(
        c_out,
        kk,
        ncols,
        T::one(),
        weight.data(),
        kk as isize,
        1,
        cols.data(),
        ncols as isize,
        1,
        T::zero(),
        &mut prod,
        ncols as isize,
        1,
    );
    let plane = oh * ow;
    let mut out = vec![T::zero(); b * c_out * plane];
    for co in 0..c_out {
        let bv = bias.data()[co];
        for bi in 0..b {
            let src = &prod[co * ncols + bi * plane..co * ncols + (bi + 1) * plane];
            let dst = &mut out[(bi * c_out + co) * plane..(bi * c_out + co + 1) * plane];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bv;
            }
        }
    }
    Ok((Tensor::from_vec(&[b, c_out, oh, ow], out)?, cols))
}

/// Single-image convolution: `C_in×H×W` input, `C_out×C_in×k×k` weight.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (c, h, w) = match input.shape()[..] {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::dim(format!("conv2d expects C×H×W, got {:?}", input.shape()))),
    };
    let batched = input.clone().reshape(&[1, c, h, w])?;
    let (out, _) = conv2d_batch(&batched, weight, bias, stride, padding)?;
    let (_, co, oh, ow) = out.dims4()?;
    out.reshape(&[co, oh, ow])
}
