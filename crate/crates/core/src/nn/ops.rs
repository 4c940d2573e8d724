//! Layer kernels: forward and backward passes on batched tensors.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor};

/// Output spatial size of a convolution or pooling window.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_len(&self) -> usize {
        self.out_height * self.out_width
    }
}

fn im2col<S: Scalar>(image: &[S], g: &ConvGeometry, cols: &mut [S]) {
    let hw_out = g.out_len();
    let k = g.kernel;
    for c in 0..g.in_channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            S::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<S: Scalar>(cols: &[S], g: &ConvGeometry, image: &mut [S]) {
    let hw_out = g.out_len();
    let k = g.kernel;
    for c in 0..g.in_channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..g.out_width {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            plane[iy as usize * g.width + ix as usize] += src[oy * g.out_width + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geometry<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: &[S],
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let [_, c_in, h, w]: [usize; 4] = input
        .shape()
        .try_into()
        .map_err(|_| Error::invalid(format!("conv2d input must be 4-D, got {:?}", input.shape())))?;
    let [c_out, wc_in, kh, kw]: [usize; 4] = weights
        .shape()
        .try_into()
        .map_err(|_| Error::invalid(format!("conv2d weights must be 4-D, got {:?}", weights.shape())))?;
    if wc_in != c_in || kh != kw || kh == 0 || bias.len() != c_out {
        return Err(Error::invalid(format!(
            "conv2d shapes inconsistent: input {:?}, weights {:?}, bias {}",
            input.shape(),
            weights.shape(),
            bias.len()
        )));
    }
    let (Some(out_height), Some(out_width)) = (
        conv_out_dim(h, kh, stride, padding),
        conv_out_dim(w, kw, stride, padding),
    ) else {
        return Err(Error::invalid(format!(
            "conv2d window {kh} (stride {stride}, padding {padding}) does not fit {h}x{w}"
        )));
    };
    Ok(ConvGeometry {
        in_channels: c_in,
        height: h,
        width: w,
        kernel: kh,
        stride,
        padding,
        out_height,
        out_width,
    })
}

/// Batched 2-D cross-correlation: `[B, Cin, H, W] * [Cout, Cin, k, k] -> [B, Cout, H', W']`.
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    bias: &[S],
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let g = conv_geometry(input, weights, bias, stride, padding)?;
    let batch = input.dim(0);
    let c_out = weights.dim(0);
    let hw_out = g.out_len();
    let mut out = Tensor::zeros(&[batch, c_out, g.out_height, g.out_width]);
    let mut cols = vec![S::zero(); g.patch_len() * hw_out];
    let w = MatRef::new(weights.data(), c_out, g.patch_len());
    for b in 0..batch {
        im2col(input.outer(b), &g, &mut cols);
        let dst = &mut out.data_mut()[b * c_out * hw_out..(b + 1) * c_out * hw_out];
        for (o, plane) in dst.chunks_mut(hw_out).enumerate() {
            plane.fill(bias[o]);
        }
        gemm(S::one(), w, MatRef::new(&cols, g.patch_len(), hw_out), S::one(), dst);
    }
    Ok(out)
}

pub struct ConvGrads<S> {
    pub input: Option<Tensor<S>>,
    pub weights: Tensor<S>,
    pub bias: Vec<S>,
}

/// Gradients of a convolution given the upstream gradient `grad_out`.
pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    grad_out: &Tensor<S>,
    stride: usize,
    padding: usize,
    need_input_grad: bool,
) -> Result<ConvGrads<S>> {
    let c_out = weights.dim(0);
    let zero_bias = vec![S::zero(); c_out];
    let g = conv_geometry(input, weights, &zero_bias, stride, padding)?;
    let batch = input.dim(0);
    let hw_out = g.out_len();
    let expected = [batch, c_out, g.out_height, g.out_width];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: grad_out.shape().to_vec(),
        });
    }
    let mut grad_w = Tensor::zeros(weights.shape());
    let mut grad_b = vec![S::zero(); c_out];
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(input.shape()));
    let mut cols = vec![S::zero(); g.patch_len() * hw_out];
    let mut dcols = vec![S::zero(); g.patch_len() * hw_out];
    let w = MatRef::new(weights.data(), c_out, g.patch_len());
    for b in 0..batch {
        let dout = grad_out.outer(b);
        for (o, plane) in dout.chunks(hw_out).enumerate() {
            grad_b[o] += plane.iter().copied().sum::<S>();
        }
        im2col(input.outer(b), &g, &mut cols);
        let dout_m = MatRef::new(dout, c_out, hw_out);
        gemm(
            S::one(),
            dout_m,
            MatRef::new(&cols, g.patch_len(), hw_out).t(),
            S::one(),
            grad_w.data_mut(),
        );
        if let Some(gi) = grad_in.as_mut() {
            gemm(S::one(), w.t(), dout_m, S::zero(), &mut dcols);
            let stride_in = g.in_channels * g.height * g.width;
            col2im(&dcols, &g, &mut gi.data_mut()[b * stride_in..(b + 1) * stride_in]);
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    })
}

/// Max pooling; returns the output and, for each output element, the flat
/// index of the winning input element.
pub fn maxpool2d_forward<S: Scalar>(
    input: &Tensor<S>,
    size: usize,
    stride: usize,
) -> Result<(Tensor<S>, Vec<usize>)> {
    let [batch, c, h, w]: [usize; 4] = input
        .shape()
        .try_into()
        .map_err(|_| Error::invalid(format!("maxpool input must be 4-D, got {:?}", input.shape())))?;
    let (Some(oh), Some(ow)) = (conv_out_dim(h, size, stride, 0), conv_out_dim(w, size, stride, 0))
    else {
        return Err(Error::invalid(format!("pool window {size} does not fit {h}x{w}")));
    };
    let mut out = Tensor::zeros(&[batch, c, oh, ow]);
    let mut argmax = vec![0usize; batch * c * oh * ow];
    let src = input.data();
    let dst = out.data_mut();
    for plane in 0..batch * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = base + (oy * stride + dy) * w + ox * stride + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                }
                let o = (plane * oh + oy) * ow + ox;
                dst[o] = src[best];
                argmax[o] = best;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_backward<S: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<S>,
) -> Tensor<S> {
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &d) in argmax.iter().zip(grad_out.data()) {
        g[idx] += d;
    }
    grad
}

/// `[B, in] x [out, in]^T + bias -> [B, out]`.
pub fn linear_forward<S: Scalar>(input: &Tensor<S>, weights: &Tensor<S>, bias: &[S]) -> Result<Tensor<S>> {
    let (batch, in_units) = (input.dim(0), input.len() / input.dim(0).max(1));
    let [out_units, w_in]: [usize; 2] = weights
        .shape()
        .try_into()
        .map_err(|_| Error::invalid("linear weights must be 2-D"))?;
    if w_in != in_units || bias.len() != out_units {
        return Err(Error::invalid(format!(
            "linear shapes inconsistent: input {:?}, weights {:?}, bias {}",
            input.shape(),
            weights.shape(),
            bias.len()
        )));
    }
    let mut out = Tensor::zeros(&[batch, out_units]);
    for row in out.data_mut().chunks_mut(out_units) {
        row.copy_from_slice(bias);
    }
    gemm(
        S::one(),
        MatRef::new(input.data(), batch, in_units),
        MatRef::new(weights.data(), out_units, in_units).t(),
        S::one(),
        out.data_mut(),
    );
    Ok(out)
}

pub struct LinearGrads<S> {
    pub input: Option<Tensor<S>>,
    pub weights: Tensor<S>,
    pub bias: Vec<S>,
}

pub fn linear_backward<S: Scalar>(
    input: &Tensor<S>,
    weights: &Tensor<S>,
    grad_out: &Tensor<S>,
    need_input_grad: bool,
) -> LinearGrads<S> {
    let batch = input.dim(0);
    let in_units = input.len() / batch.max(1);
    let out_units = weights.dim(0);
    let dy = MatRef::new(grad_out.data(), batch, out_units);
    let mut grad_w = Tensor::zeros(weights.shape());
    gemm(
        S::one(),
        dy.t(),
        MatRef::new(input.data(), batch, in_units),
        S::zero(),
        grad_w.data_mut(),
    );
    let mut grad_b = vec![S::zero(); out_units];
    for row in grad_out.data().chunks(out_units) {
        for (g, &v) in grad_b.iter_mut().zip(row) {
            *g += v;
        }
    }
    let grad_in = need_input_grad.then(|| {
        let mut gi = Tensor::zeros(input.shape());
        gemm(
            S::one(),
            dy,
            MatRef::new(weights.data(), out_units, in_units),
            S::zero(),
            gi.data_mut(),
        );
        gi
    });
    LinearGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    }
}

pub fn relu_forward<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Gradient of ReLU, gated on the forward *output*.
pub fn relu_backward<S: Scalar>(output: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > S::zero() { g } else { S::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape(), data).expect("same shape")
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
pub fn softmax_cross_entropy<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<(f64, Tensor<S>)> {
    let batch = logits.dim(0);
    let classes = logits.len() / batch.max(1);
    if labels.len() != batch {
        return Err(Error::invalid(format!("{} labels for batch of {batch}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0f64;
    let inv_batch = S::one() / S::from_f64_lossy(batch as f64);
    for ((row, grow), &label) in logits
        .data()
        .chunks(classes)
        .zip(grad.data_mut().chunks_mut(classes))
        .zip(labels)
    {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut denom = S::zero();
        for (g, &z) in grow.iter_mut().zip(row) {
            *g = (z - max).exp();
            denom += *g;
        }
        loss += (denom.ln() + max - row[label]).as_f64();
        for g in grow.iter_mut() {
            *g = *g / denom * inv_batch;
        }
        grow[label] = grow[label] - inv_batch;
    }
    Ok((loss / batch as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(input: &Tensor<f64>, w: &Tensor<f64>, bias: &[f64], stride: usize, pad: usize) -> Vec<f64> {
        let (b, ci, h, wd) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
        let (co, k) = (w.dim(0), w.dim(2));
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; b * co * oh * ow];
        for n in 0..b {
            for o in 0..co {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = bias[o];
                        for c in 0..ci {
                            for i in 0..k {
                                for j in 0..k {
                                    let iy = (y * stride + i) as isize - pad as isize;
                                    let ix = (x * stride + j) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += input.data()[((n * ci + c) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((o * ci + c) * k + i) * k + j];
                                }
                            }
                        }
                        out[((n * co + o) * oh + y) * ow + x] = acc;
                    }
                }
            }
        }
        out
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn ones_filter_sums_window() {
        let input = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let out = conv2d_forward(&input, &w, &[0.0], 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data()[0], 9.0);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random(&[2, 3, 6, 6], &mut rng);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        let out = conv2d_forward(&input, &w, &[0.0; 4], 1, 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (stride, pad) in [(1, 0), (2, 1), (1, 2)] {
            let input = random(&[2, 3, 8, 8], &mut rng);
            let w = random(&[4, 3, 5, 5], &mut rng);
            let bias: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = conv2d_forward(&input, &w, &bias, stride, pad).unwrap();
            let slow = naive_conv(&input, &w, &bias, stride, pad);
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_rejects_mismatched_channels() {
        let input = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            conv2d_forward(&input, &w, &[0.0], 1, 0),
            Err(Error::InvalidArgument(_))
        ));
        let w = Tensor::<f32>::zeros(&[1, 2, 7, 7]);
        assert!(conv2d_forward(&input, &w, &[0.0], 1, 0).is_err());
    }

    #[test]
    fn maxpool_picks_window_max_and_routes_gradient() {
        let input = Tensor::<f32>::from_vec(
            &[1, 1, 2, 4],
            vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 6.0],
        )
        .unwrap();
        let (out, argmax) = maxpool2d_forward(&input, 2, 2).unwrap();
        assert_eq!(out.data(), &[5.0, 7.0]);
        let g = maxpool2d_backward(input.shape(), &argmax, &Tensor::full(&[1, 1, 1, 2], 1.0));
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let logits = Tensor::<f32>::zeros(&[2, 3]);
        assert!(softmax_cross_entropy(&logits, &[0, 3]).is_err());
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 2]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-6);
        assert!((grad.data()[0] - (1.0 / 3.0 - 1.0) / 2.0).abs() < 1e-6);
    }
}
