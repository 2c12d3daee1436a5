//! Forward and backward math for the layer operations, as pure functions
//! over flat row-major buffers. The tape wires these into the autodiff
//! graph; they are kept free of tape types so they can be tested directly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

// ── convolution ─────────────────────────────────────────────────────

/// Resolved geometry of a 2-D cross-correlation.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub fn conv2d_dims(
    input_shape: &[usize],
    weight_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<ConvDims> {
    let (&[batch, c_in, h, w], &[c_out, wc_in, kh, kw]) = (input_shape, weight_shape) else {
        return Err(CoreError::shape(
            "conv2d",
            format!("expected NCHW input and OIKK weights, got {input_shape:?} / {weight_shape:?}"),
        ));
    };
    if kh != kw {
        return Err(CoreError::shape("conv2d", "non-square kernel"));
    }
    if wc_in != c_in {
        return Err(CoreError::shape(
            "conv2d",
            format!("weight expects {wc_in} input channels, input has {c_in}"),
        ));
    }
    if stride == 0 {
        return Err(CoreError::invalid("conv2d", "stride must be >= 1"));
    }
    if h + 2 * padding < kh || w + 2 * padding < kh {
        return Err(CoreError::shape(
            "conv2d",
            format!("kernel {kh} exceeds padded input {}x{}", h + 2 * padding, w + 2 * padding),
        ));
    }
    Ok(ConvDims {
        batch,
        c_in,
        h,
        w,
        c_out,
        kernel: kh,
        stride,
        padding,
        out_h: (h + 2 * padding - kh) / stride + 1,
        out_w: (w + 2 * padding - kw) / stride + 1,
    })
}

/// Cross-correlation (no kernel flip) with zero padding.
pub fn conv2d_forward(input: &[f64], weight: &[f64], dims: &ConvDims) -> Vec<f64> {
    let d = dims;
    let mut out = vec![0.0; d.batch * d.c_out * d.out_h * d.out_w];
    for n in 0..d.batch {
        for o in 0..d.c_out {
            for oy in 0..d.out_h {
                for ox in 0..d.out_w {
                    let mut acc = 0.0;
                    for c in 0..d.c_in {
                        for ky in 0..d.kernel {
                            let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            for kx in 0..d.kernel {
                                let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                let ii = ((n * d.c_in + c) * d.h + iy as usize) * d.w + ix as usize;
                                let wi = ((o * d.c_in + c) * d.kernel + ky) * d.kernel + kx;
                                acc += input[ii] * weight[wi];
                            }
                        }
                    }
                    out[((n * d.c_out + o) * d.out_h + oy) * d.out_w + ox] = acc;
                }
            }
        }
    }
    out
}

/// Gradients with respect to the input and the weights.
pub fn conv2d_backward(
    input: &[f64],
    weight: &[f64],
    dims: &ConvDims,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let d = dims;
    let mut din = vec![0.0; input.len()];
    let mut dweight = vec![0.0; weight.len()];
    for n in 0..d.batch {
        for o in 0..d.c_out {
            for oy in 0..d.out_h {
                for ox in 0..d.out_w {
                    let g = dout[((n * d.c_out + o) * d.out_h + oy) * d.out_w + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..d.c_in {
                        for ky in 0..d.kernel {
                            let iy = (oy * d.stride + ky) as isize - d.padding as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            for kx in 0..d.kernel {
                                let ix = (ox * d.stride + kx) as isize - d.padding as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                let ii = ((n * d.c_in + c) * d.h + iy as usize) * d.w + ix as usize;
                                let wi = ((o * d.c_in + c) * d.kernel + ky) * d.kernel + kx;
                                din[ii] += g * weight[wi];
                                dweight[wi] += g * input[ii];
                            }
                        }
                    }
                }
            }
        }
    }
    (din, dweight)
}

// ── max pooling ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct PoolDims {
    pub batch: usize,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub window: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub fn maxpool_dims(input_shape: &[usize], window: usize, stride: usize) -> Result<PoolDims> {
    let &[batch, channels, h, w] = input_shape else {
        return Err(CoreError::shape(
            "maxpool2d",
            format!("expected NCHW input, got {input_shape:?}"),
        ));
    };
    if window == 0 || stride == 0 {
        return Err(CoreError::invalid("maxpool2d", "window and stride must be >= 1"));
    }
    if window > h || window > w {
        return Err(CoreError::shape(
            "maxpool2d",
            format!("window {window} larger than input {h}x{w}"),
        ));
    }
    Ok(PoolDims {
        batch,
        channels,
        h,
        w,
        window,
        stride,
        out_h: (h - window) / stride + 1,
        out_w: (w - window) / stride + 1,
    })
}

/// Index of the window maximum, first occurrence in row-major scan order.
fn window_argmax(input: &[f64], d: &PoolDims, base: usize, oy: usize, ox: usize) -> usize {
    let mut best_idx = 0;
    let mut best = f64::NEG_INFINITY;
    for ky in 0..d.window {
        for kx in 0..d.window {
            let iy = oy * d.stride + ky;
            let ix = ox * d.stride + kx;
            let idx = base + iy * d.w + ix;
            if input[idx] > best {
                best = input[idx];
                best_idx = idx;
            }
        }
    }
    best_idx
}

pub fn maxpool_forward(input: &[f64], d: &PoolDims) -> Vec<f64> {
    let mut out = vec![0.0; d.batch * d.channels * d.out_h * d.out_w];
    for n in 0..d.batch {
        for c in 0..d.channels {
            let base = (n * d.channels + c) * d.h * d.w;
            for oy in 0..d.out_h {
                for ox in 0..d.out_w {
                    let idx = window_argmax(input, d, base, oy, ox);
                    out[((n * d.channels + c) * d.out_h + oy) * d.out_w + ox] = input[idx];
                }
            }
        }
    }
    out
}

/// Routes each output gradient to the argmax position of its window.
pub fn maxpool_backward(input: &[f64], d: &PoolDims, dout: &[f64]) -> Vec<f64> {
    let mut din = vec![0.0; input.len()];
    for n in 0..d.batch {
        for c in 0..d.channels {
            let base = (n * d.channels + c) * d.h * d.w;
            for oy in 0..d.out_h {
                for ox in 0..d.out_w {
                    let idx = window_argmax(input, d, base, oy, ox);
                    din[idx] += dout[((n * d.channels + c) * d.out_h + oy) * d.out_w + ox];
                }
            }
        }
    }
    din
}

// ── batch normalization ─────────────────────────────────────────────

/// Per-channel batch statistics of a training-mode normalization.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance over batch and spatial positions.
    pub var: Vec<f64>,
}

fn per_channel<F: FnMut(usize, usize)>(batch: usize, channels: usize, hw: usize, mut f: F) {
    for c in 0..channels {
        for n in 0..batch {
            let base = (n * channels + c) * hw;
            for i in 0..hw {
                f(c, base + i);
            }
        }
    }
}

pub fn batchnorm_train_forward(
    input: &[f64],
    gamma: &[f64],
    beta: &[f64],
    shape: (usize, usize, usize, usize),
    eps: f64,
) -> Result<(Vec<f64>, BnBatchStats)> {
    let (batch, channels, h, w) = shape;
    if batch < 2 {
        return Err(CoreError::invalid(
            "batchnorm2d",
            format!("train mode needs batch size >= 2, got {batch}"),
        ));
    }
    let hw = h * w;
    let m = (batch * hw) as f64;
    let mut mean = vec![0.0; channels];
    per_channel(batch, channels, hw, |c, idx| mean[c] += input[idx]);
    for v in mean.iter_mut() {
        *v /= m;
    }
    let mut var = vec![0.0; channels];
    per_channel(batch, channels, hw, |c, idx| {
        let d = input[idx] - mean[c];
        var[c] += d * d;
    });
    for v in var.iter_mut() {
        *v /= m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
    let mut out = vec![0.0; input.len()];
    per_channel(batch, channels, hw, |c, idx| {
        out[idx] = gamma[c] * (input[idx] - mean[c]) * inv_std[c] + beta[c];
    });
    Ok((out, BnBatchStats { mean, var }))
}

/// Training-mode backward through the batch statistics.
pub fn batchnorm_train_backward(
    input: &[f64],
    gamma: &[f64],
    stats: &BnBatchStats,
    shape: (usize, usize, usize, usize),
    eps: f64,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (batch, channels, h, w) = shape;
    let hw = h * w;
    let m = (batch * hw) as f64;
    let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();

    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    // sum_dy and sum of dy * xhat per channel
    let mut s1 = vec![0.0; channels];
    let mut s2 = vec![0.0; channels];
    per_channel(batch, channels, hw, |c, idx| {
        let xhat = (input[idx] - stats.mean[c]) * inv_std[c];
        s1[c] += dout[idx];
        s2[c] += dout[idx] * xhat;
        dbeta[c] += dout[idx];
        dgamma[c] += dout[idx] * xhat;
    });
    let mut din = vec![0.0; input.len()];
    per_channel(batch, channels, hw, |c, idx| {
        let xhat = (input[idx] - stats.mean[c]) * inv_std[c];
        din[idx] = gamma[c] * inv_std[c] / m * (m * dout[idx] - s1[c] - xhat * s2[c]);
    });
    (din, dgamma, dbeta)
}

pub fn batchnorm_eval_forward(
    input: &[f64],
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    shape: (usize, usize, usize, usize),
    eps: f64,
) -> Vec<f64> {
    let (batch, channels, h, w) = shape;
    let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
    let mut out = vec![0.0; input.len()];
    per_channel(batch, channels, h * w, |c, idx| {
        out[idx] = gamma[c] * (input[idx] - running_mean[c]) * inv_std[c] + beta[c];
    });
    out
}

/// Eval mode treats the running statistics as constants.
pub fn batchnorm_eval_backward(
    input: &[f64],
    gamma: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    shape: (usize, usize, usize, usize),
    eps: f64,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (batch, channels, h, w) = shape;
    let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
    let mut din = vec![0.0; input.len()];
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    per_channel(batch, channels, h * w, |c, idx| {
        let xhat = (input[idx] - running_mean[c]) * inv_std[c];
        din[idx] = dout[idx] * gamma[c] * inv_std[c];
        dgamma[c] += dout[idx] * xhat;
        dbeta[c] += dout[idx];
    });
    (din, dgamma, dbeta)
}

// ── dense (affine) layer ────────────────────────────────────────────

/// `y = x W + b` with `x` of shape N x I, `W` of shape I x O.
pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64], n: usize, i: usize, o: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * o];
    for r in 0..n {
        for col in 0..o {
            let mut acc = b[col];
            for k in 0..i {
                acc += x[r * i + k] * w[k * o + col];
            }
            out[r * o + col] = acc;
        }
    }
    out
}

pub fn dense_backward(
    x: &[f64],
    w: &[f64],
    n: usize,
    i: usize,
    o: usize,
    dout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; n * i];
    let mut dw = vec![0.0; i * o];
    let mut db = vec![0.0; o];
    for r in 0..n {
        for col in 0..o {
            let g = dout[r * o + col];
            db[col] += g;
            for k in 0..i {
                dx[r * i + k] += g * w[k * o + col];
                dw[k * o + col] += g * x[r * i + k];
            }
        }
    }
    (dx, dw, db)
}

// ── softmax cross-entropy ───────────────────────────────────────────

/// Mean over the batch of `-log softmax(logits)[label]`, stabilized by
/// max subtraction.
pub fn softmax_ce_forward(logits: &[f64], labels: &[usize], n: usize, c: usize) -> Result<f64> {
    let mut total = 0.0;
    for r in 0..n {
        let label = labels[r];
        if label >= c {
            return Err(CoreError::invalid(
                "softmax_cross_entropy",
                format!("label {label} out of range for {c} classes"),
            ));
        }
        let row = &logits[r * c..(r + 1) * c];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum_exp = 0.0;
        for &z in row {
            sum_exp += libm::exp(z - max);
        }
        total += max + libm::log(sum_exp) - row[label];
    }
    Ok(total / n as f64)
}

pub fn softmax_ce_backward(logits: &[f64], labels: &[usize], n: usize, c: usize, g: f64) -> Vec<f64> {
    let mut dlogits = vec![0.0; n * c];
    let scale = g / n as f64;
    for r in 0..n {
        let row = &logits[r * c..(r + 1) * c];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum_exp = 0.0;
        for &z in row {
            sum_exp += libm::exp(z - max);
        }
        for col in 0..c {
            let p = libm::exp(row[col] - max) / sum_exp;
            let target = if col == labels[r] { 1.0 } else { 0.0 };
            dlogits[r * c + col] = scale * (p - target);
        }
    }
    dlogits
}

/// Row-wise softmax probabilities (used for scoring, not on the tape).
pub fn softmax_rows(logits: &[f64], n: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for r in 0..n {
        let row = &logits[r * c..(r + 1) * c];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum_exp = 0.0;
        for (i, &z) in row.iter().enumerate() {
            let e = libm::exp(z - max);
            out[r * c + i] = e;
            sum_exp += e;
        }
        for i in 0..c {
            out[r * c + i] /= sum_exp;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        // 1x1 kernel of value 1 reproduces the input.
        let dims = conv2d_dims(&[1, 1, 3, 3], &[1, 1, 1, 1], 1, 0).unwrap();
        let input: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let out = conv2d_forward(&input, &[1.0], &dims);
        assert_eq!(out, input);
    }

    #[test]
    fn conv_all_ones_sums_entries() {
        let dims = conv2d_dims(&[1, 1, 2, 2], &[1, 1, 2, 2], 1, 0).unwrap();
        let out = conv2d_forward(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4], &dims);
        assert_eq!(out, vec![10.0]);
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        assert!(conv2d_dims(&[1, 1, 2, 2], &[1, 1, 3, 3], 1, 0).is_err());
        assert!(conv2d_dims(&[1, 2, 4, 4], &[1, 3, 3, 3], 1, 1).is_err());
    }

    #[test]
    fn maxpool_constant_input() {
        let dims = maxpool_dims(&[1, 1, 4, 4], 2, 2).unwrap();
        let out = maxpool_forward(&[3.5; 16], &dims);
        assert_eq!(out, vec![3.5; 4]);
    }

    #[test]
    fn maxpool_picks_maximum() {
        let dims = maxpool_dims(&[1, 1, 2, 2], 2, 2).unwrap();
        let out = maxpool_forward(&[1.0, 2.0, 3.0, 4.0], &dims);
        assert_eq!(out, vec![4.0]);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax_first_tie() {
        let dims = maxpool_dims(&[1, 1, 2, 2], 2, 2).unwrap();
        // tie between index 1 and 2; first occurrence (row-major) wins
        let input = [0.0, 7.0, 7.0, 1.0];
        let din = maxpool_backward(&input, &dims, &[1.0]);
        assert_eq!(din, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_window_too_large() {
        assert!(maxpool_dims(&[1, 1, 2, 2], 3, 1).is_err());
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let input = [1.0, 2.0, 3.0, 5.0];
        let (out, stats) =
            batchnorm_train_forward(&input, &[1.0], &[0.0], (4, 1, 1, 1), 1e-5).unwrap();
        let mean: f64 = out.iter().sum::<f64>() / 4.0;
        let var: f64 = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4); // eps damping
        assert!((stats.mean[0] - 2.75).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_constant_channel_is_zeroed() {
        let input = [4.0; 8];
        let (out, _) = batchnorm_train_forward(&input, &[1.0], &[0.0], (2, 1, 2, 2), 1e-5).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn batchnorm_rejects_batch_of_one() {
        let input = [1.0, 2.0];
        assert!(batchnorm_train_forward(&input, &[1.0], &[0.0], (1, 1, 1, 2), 1e-5).is_err());
    }

    #[test]
    fn batchnorm_eval_closed_form() {
        let out = batchnorm_eval_forward(&[7.0], &[1.0], &[0.0], &[5.0], &[4.0], (1, 1, 1, 1), 1e-5);
        let expected = (7.0 - 5.0) / (4.0f64 + 1e-5).sqrt();
        assert!((out[0] - expected).abs() < 1e-12);
        assert!((out[0] - 0.99999875).abs() < 1e-7);
    }

    #[test]
    fn dense_identity_and_bias() {
        // identity weights, zero bias
        let w = [1.0, 0.0, 0.0, 1.0];
        let out = dense_forward(&[3.0, -2.0], &w, &[0.0, 0.0], 1, 2, 2);
        assert_eq!(out, vec![3.0, -2.0]);
        // zero weights broadcast the bias
        let out2 = dense_forward(&[3.0, -2.0], &[0.0; 4], &[0.5, -0.25], 1, 2, 2);
        assert_eq!(out2, vec![0.5, -0.25]);
    }

    #[test]
    fn dense_hand_multiplied() {
        // (1, 2) . [[1, 0], [1, 1]] + (1, 1) = (4, 3)
        let out = dense_forward(&[1.0, 2.0], &[1.0, 0.0, 1.0, 1.0], &[1.0, 1.0], 1, 2, 2);
        assert_eq!(out, vec![4.0, 3.0]);
    }

    #[test]
    fn softmax_ce_uniform_logits() {
        let loss = softmax_ce_forward(&[0.0, 0.0], &[0], 1, 2).unwrap();
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_saturated_is_zero() {
        let loss = softmax_ce_forward(&[1000.0, 0.0], &[0], 1, 2).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(loss.is_finite());
    }

    #[test]
    fn softmax_ce_closed_form() {
        // logits (2, 0), label 1 -> log(e^2 + 1)
        let loss = softmax_ce_forward(&[2.0, 0.0], &[1], 1, 2).unwrap();
        let expected = (2.0f64.exp() + 1.0).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 2.126928).abs() < 1e-6);
    }

    #[test]
    fn softmax_ce_rejects_bad_label() {
        assert!(softmax_ce_forward(&[0.0, 0.0], &[2], 1, 2).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let probs = softmax_rows(&[0.2, -1.0, 3.0, 0.0, 0.0, 0.0], 2, 3);
        for r in 0..2 {
            let s: f64 = probs[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
