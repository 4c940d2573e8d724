//! Whole-model forward and backward passes.

use crate::error::{Error, Result};
use crate::graph::{LayerKind, ModelGraph};
use crate::tensor::{Scalar, Tensor};

use super::ops;

/// Logits plus captured post-ReLU activations of prunable layers.
#[derive(Debug, Clone)]
pub struct ForwardOutput<S> {
    pub logits: Tensor<S>,
    /// `(prunable layer id, activation [B, C, H, W] or [B, units])`.
    pub activations: Vec<(usize, Tensor<S>)>,
}

struct Trace<S> {
    /// `outputs[i]` is the output of layer `i`.
    outputs: Vec<Tensor<S>>,
    argmax: Vec<Option<Vec<usize>>>,
}

fn check_batch<S: Scalar>(model: &ModelGraph<S>, batch: &Tensor<S>) -> Result<()> {
    let [c, h, w] = model.input_shape();
    let shape = batch.shape();
    if shape.len() != 4 || shape[1..] != [c, h, w] || shape[0] == 0 {
        return Err(Error::invalid(format!(
            "batch shape {shape:?} does not match model input [B, {c}, {h}, {w}]"
        )));
    }
    Ok(())
}

fn run<S: Scalar>(model: &ModelGraph<S>, batch: &Tensor<S>, keep_all: bool) -> Result<Trace<S>> {
    check_batch(model, batch)?;
    let n = batch.dim(0);
    let mut outputs: Vec<Tensor<S>> = Vec::with_capacity(model.layers().len());
    let mut argmax = Vec::with_capacity(model.layers().len());
    for (i, layer) in model.layers().iter().enumerate() {
        let input = if i == 0 { batch } else { &outputs[i - 1] };
        let (out, idx) = match layer.spec.kind {
            LayerKind::Conv2d { stride, padding, .. } => (
                ops::conv2d_forward(
                    input,
                    layer.weight.as_ref().unwrap(),
                    layer.bias.as_ref().unwrap(),
                    stride,
                    padding,
                )?,
                None,
            ),
            LayerKind::Linear { .. } => (
                ops::linear_forward(input, layer.weight.as_ref().unwrap(), layer.bias.as_ref().unwrap())?,
                None,
            ),
            LayerKind::Relu => (ops::relu_forward(input), None),
            LayerKind::MaxPool2d { size, stride } => {
                let (out, idx) = ops::maxpool2d_forward(input, size, stride)?;
                (out, Some(idx))
            }
            LayerKind::Flatten => {
                let units = input.len() / n;
                (input.clone().reshape(&[n, units])?, None)
            }
        };
        if !keep_all && i >= 2 {
            // Inference only needs the previous output.
            outputs[i - 2] = Tensor::zeros(&[0]);
        }
        outputs.push(out);
        argmax.push(idx);
    }
    Ok(Trace { outputs, argmax })
}

/// Runs the model on `batch` (`[B, C, H, W]`). With `capture`, also returns the
/// post-ReLU activation map of every prunable layer.
pub fn model_forward<S: Scalar>(model: &ModelGraph<S>, batch: &Tensor<S>, capture: bool) -> Result<ForwardOutput<S>> {
    let sites: Vec<(usize, usize)> = if capture {
        model
            .prunable_layers()
            .into_iter()
            .map(|l| (l, model.activation_site(l)))
            .collect()
    } else {
        Vec::new()
    };
    let mut trace = run(model, batch, capture)?;
    let activations = sites
        .iter()
        .map(|&(layer, site)| (layer, trace.outputs[site].clone()))
        .collect();
    let logits = trace.outputs.pop().expect("at least one layer");
    Ok(ForwardOutput { logits, activations })
}

/// Weight and bias gradients of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad<S> {
    pub weight: Tensor<S>,
    pub bias: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct Gradients<S> {
    pub loss: f64,
    /// Indexed by layer; `None` for layers without parameters.
    pub layers: Vec<Option<ParamGrad<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Flattened views in the same order as [`ModelGraph::param_slices`].
    pub fn slices(&self) -> Vec<&[S]> {
        let mut out = Vec::new();
        for g in self.layers.iter().flatten() {
            out.push(g.weight.data());
            out.push(g.bias.as_slice());
        }
        out
    }
}

/// Gradients of the mean softmax cross-entropy over the batch.
///
/// Gradients of inactive (pruned) filters are exactly zero.
pub fn model_backward<S: Scalar>(model: &ModelGraph<S>, batch: &Tensor<S>, labels: &[usize]) -> Result<Gradients<S>> {
    let trace = run(model, batch, true)?;
    let (loss, mut grad) = ops::softmax_cross_entropy(trace.outputs.last().unwrap(), labels)?;
    let first_param = model.param_layers()[0];
    let mut layers: Vec<Option<ParamGrad<S>>> = vec![None; model.layers().len()];
    for i in (0..model.layers().len()).rev() {
        let layer = model.layer(i);
        let input = if i == 0 { batch } else { &trace.outputs[i - 1] };
        let need_input = i > first_param;
        grad = match layer.spec.kind {
            LayerKind::Conv2d { stride, padding, .. } => {
                let g = ops::conv2d_backward(input, layer.weight.as_ref().unwrap(), &grad, stride, padding, need_input)?;
                layers[i] = Some(ParamGrad {
                    weight: g.weights,
                    bias: g.bias,
                });
                match g.input {
                    Some(gi) => gi,
                    None => break,
                }
            }
            LayerKind::Linear { .. } => {
                let g = ops::linear_backward(input, layer.weight.as_ref().unwrap(), &grad, need_input);
                layers[i] = Some(ParamGrad {
                    weight: g.weights,
                    bias: g.bias,
                });
                match g.input {
                    Some(gi) => gi,
                    None => break,
                }
            }
            LayerKind::Relu => ops::relu_backward(&trace.outputs[i], &grad),
            LayerKind::MaxPool2d { .. } => {
                ops::maxpool2d_backward(input.shape(), trace.argmax[i].as_ref().unwrap(), &grad)
            }
            LayerKind::Flatten => grad.reshape(input.shape())?,
        };
    }
    for (i, slot) in layers.iter_mut().enumerate() {
        let (Some(g), Some(mask)) = (slot.as_mut(), model.mask(i)) else {
            continue;
        };
        let per_filter = g.weight.len() / mask.len();
        for (f, &active) in mask.bits().iter().enumerate() {
            if !active {
                g.weight.data_mut()[f * per_filter..(f + 1) * per_filter].fill(S::zero());
                g.bias[f] = S::zero();
            }
        }
    }
    Ok(Gradients { loss, layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{lenet5, Layer, LayerSpec};

    #[test]
    fn zero_weight_model_gives_uniform_logits() {
        let mut m = lenet5::<f32>(0).unwrap();
        for s in m.param_slices_mut() {
            s.fill(0.0);
        }
        let batch = Tensor::full(&[3, 1, 28, 28], 0.7);
        let out = model_forward(&m, &batch, false).unwrap();
        assert!(out.logits.data().iter().all(|&v| v == out.logits.data()[0]));
    }

    #[test]
    fn lenet5_activation_shapes() {
        let m = lenet5::<f32>(1).unwrap();
        let batch = Tensor::full(&[2, 1, 28, 28], 0.5);
        let out = model_forward(&m, &batch, true).unwrap();
        let shapes: Vec<_> = out.activations.iter().map(|(l, a)| (*l, a.shape().to_vec())).collect();
        assert_eq!(shapes[0], (0, vec![2, 6, 24, 24]));
        assert_eq!(shapes[1], (3, vec![2, 16, 8, 8]));
        assert_eq!(shapes[2], (7, vec![2, 120]));
        assert_eq!(out.logits.shape(), &[2, 10]);
    }

    #[test]
    fn masked_filter_activation_is_zero() {
        let mut m = lenet5::<f32>(2).unwrap();
        m.prune_filters(0, &[3]).unwrap();
        let batch = Tensor::full(&[1, 1, 28, 28], 0.9);
        let out = model_forward(&m, &batch, true).unwrap();
        let a = &out.activations[0].1;
        assert!(a.outer(0)[3 * 576..4 * 576].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_batch_shape_is_rejected() {
        let m = lenet5::<f32>(0).unwrap();
        assert!(model_forward(&m, &Tensor::zeros(&[1, 1, 27, 28]), false).is_err());
        assert!(model_backward(&m, &Tensor::zeros(&[1, 1, 28, 28]), &[10]).is_err());
    }

    #[test]
    fn logistic_gradient_closed_form() {
        // Two-class softmax over logits [w*x, 0] is the logistic model:
        // dL/dw = (p - y) * x.
        let layers = vec![
            Layer {
                spec: LayerSpec::flatten(),
                weight: None,
                bias: None,
                mask: None,
            },
            Layer {
                spec: LayerSpec::linear(1, 2).frozen(),
                weight: Some(Tensor::from_vec(&[2, 1], vec![0.8f64, 0.0]).unwrap()),
                bias: Some(vec![0.0, 0.0]),
                mask: None,
            },
        ];
        let m = ModelGraph::from_layers([1, 1, 1], layers).unwrap();
        let x = 1.5f64;
        let g = model_backward(&m, &Tensor::from_vec(&[1, 1, 1, 1], vec![x]).unwrap(), &[0]).unwrap();
        let p = 1.0 / (1.0 + (-(0.8 * x)).exp());
        let gw = g.layers[1].as_ref().unwrap().weight.data()[0];
        assert!((gw - (p - 1.0) * x).abs() < 1e-12);
    }

    #[test]
    fn masked_gradients_are_exactly_zero() {
        let mut m = lenet5::<f64>(3).unwrap();
        m.prune_filters(0, &[1]).unwrap();
        m.prune_filters(7, &[5, 6]).unwrap();
        let batch = Tensor::full(&[2, 1, 28, 28], 0.3);
        let g = model_backward(&m, &batch, &[1, 2]).unwrap();
        let conv = g.layers[0].as_ref().unwrap();
        assert!(conv.weight.outer(1).iter().all(|&v| v == 0.0));
        assert_eq!(conv.bias[1], 0.0);
        let fc = g.layers[7].as_ref().unwrap();
        assert!(fc.weight.outer(5).iter().chain(fc.weight.outer(6)).all(|&v| v == 0.0));
    }
}
