//! Same-padded stride-1 2D cross-correlation via im2col and dgemm.

use crate::error::{Error, Result};
use crate::numerics::RealFeatureMap;

use super::ConvLayer;

/// `C (m×n) = A (m×k) · B (k×n) + beta·C` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(m == 0 || n == 0 || c.len() > (m - 1) * rsc + (n - 1));
    // SAFETY: the asserts above bound every index dgemm touches inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Patch matrix with row `(c, ky, kx)` and column `(i, j)`.
fn im2col(input: &[f64], channels: usize, h: usize, w: usize, kernel: usize) -> Vec<f64> {
    let pad = kernel / 2;
    let hw = h * w;
    let mut cols = vec![0.0; channels * kernel * kernel * hw];
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = ((c * kernel + ky) * kernel + kx) * hw;
                let dst = &mut cols[row..row + hw];
                // output column j reads input column j + kx - pad
                let j_lo = pad.saturating_sub(kx);
                let j_hi = (w + pad).saturating_sub(kx).min(w);
                for i in 0..h {
                    let src_i = i + ky;
                    if src_i < pad || src_i - pad >= h || j_lo >= j_hi {
                        continue;
                    }
                    let src_row = (src_i - pad) * w;
                    let s0 = src_row + j_lo + kx - pad;
                    dst[i * w + j_lo..i * w + j_hi].copy_from_slice(&plane[s0..s0 + (j_hi - j_lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
fn col2im(cols: &[f64], channels: usize, h: usize, w: usize, kernel: usize) -> Vec<f64> {
    let pad = kernel / 2;
    let hw = h * w;
    let mut out = vec![0.0; channels * hw];
    for c in 0..channels {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = ((c * kernel + ky) * kernel + kx) * hw;
                let src = &cols[row..row + hw];
                let j_lo = pad.saturating_sub(kx);
                let j_hi = (w + pad).saturating_sub(kx).min(w);
                for i in 0..h {
                    let src_i = i + ky;
                    if src_i < pad || src_i - pad >= h || j_lo >= j_hi {
                        continue;
                    }
                    let d0 = (src_i - pad) * w + j_lo + kx - pad;
                    for (d, s) in plane[d0..d0 + (j_hi - j_lo)]
                        .iter_mut()
                        .zip(&src[i * w + j_lo..i * w + j_hi])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
    out
}

/// Zero-padded "same" cross-correlation with bias.
pub fn conv2d_same(input: &RealFeatureMap, layer: &ConvLayer) -> Result<RealFeatureMap> {
    if input.channels() != layer.in_channels {
        return Err(Error::shape(format!(
            "layer expects {} input channels, got {}",
            layer.in_channels,
            input.channels()
        )));
    }
    layer.validate()?;
    Ok(conv_forward(input, layer))
}

pub(crate) fn conv_forward(input: &RealFeatureMap, layer: &ConvLayer) -> RealFeatureMap {
    let (h, w) = (input.height(), input.width());
    let hw = h * w;
    let k = layer.patch_len();
    let cols = im2col(input.data(), layer.in_channels, h, w, layer.kernel);
    let mut out = vec![0.0; layer.out_channels * hw];
    gemm(layer.out_channels, k, hw, &layer.weights, (k, 1), &cols, (hw, 1), 0.0, &mut out, hw);
    for (o, chunk) in out.chunks_exact_mut(hw).enumerate() {
        let b = layer.bias[o];
        if b != 0.0 {
            for v in chunk {
                *v += b;
            }
        }
    }
    RealFeatureMap::new(layer.out_channels, h, w, out).expect("conv output shape")
}

/// Accumulates weight and bias gradients into `grad` and returns the gradient
/// with respect to `input`.
pub(crate) fn conv_backward(
    input: &RealFeatureMap,
    layer: &ConvLayer,
    d_out: &[f64],
    grad: &mut ConvLayer,
    need_input_grad: bool,
) -> Option<RealFeatureMap> {
    let (h, w) = (input.height(), input.width());
    let hw = h * w;
    let k = layer.patch_len();
    debug_assert_eq!(d_out.len(), layer.out_channels * hw);
    let cols = im2col(input.data(), layer.in_channels, h, w, layer.kernel);

    // dW += dOut · colsᵀ
    gemm(layer.out_channels, hw, k, d_out, (hw, 1), &cols, (1, hw), 1.0, &mut grad.weights, k);
    for (o, chunk) in d_out.chunks_exact(hw).enumerate() {
        grad.bias[o] += chunk.iter().sum::<f64>();
    }
    if !need_input_grad {
        return None;
    }
    // dCols = Wᵀ · dOut
    let mut d_cols = cols;
    gemm(k, layer.out_channels, hw, &layer.weights, (1, k), d_out, (hw, 1), 0.0, &mut d_cols, hw);
    let d_in = col2im(&d_cols, layer.in_channels, h, w, layer.kernel);
    Some(RealFeatureMap::new(layer.in_channels, h, w, d_in).expect("input grad shape"))
}
