//! Random architectures and mask states shared by the integration tests.
#![allow(dead_code)]

use aap_core::graph::{LayerSpec, ModelGraph};
use aap_core::nn::ops::conv_out_dim;
use aap_core::{FilterMask, LayerKind, Scalar};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn side_after(size: usize, specs: &[LayerSpec]) -> usize {
    specs.iter().fold(size, |side, spec| match spec.kind {
        LayerKind::Conv2d { kernel, stride, padding, .. } => conv_out_dim(side, kernel, stride, padding).unwrap(),
        LayerKind::MaxPool2d { size, stride } => conv_out_dim(side, size, stride, 0).unwrap(),
        _ => side,
    })
}

/// A random conv/pool/linear stack on a small input, ending in a frozen
/// 4-way classifier.
pub fn random_model<S: Scalar>(seed: u64) -> ModelGraph<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = rng.gen_range(1..=3);
    let size = rng.gen_range(7..=10);
    let input = [channels, size, size];
    let mut specs = Vec::new();
    let c1 = rng.gen_range(2..=4);
    let mut conv = LayerSpec::conv(channels, c1, rng.gen_range(2..=3));
    if let LayerKind::Conv2d { stride, padding, .. } = &mut conv.kind {
        *stride = rng.gen_range(1..=2);
        *padding = rng.gen_range(0..=1);
    }
    specs.push(conv);
    specs.push(LayerSpec::relu());
    if rng.gen_bool(0.5) {
        specs.push(LayerSpec::maxpool(2));
    }
    let (mut c, mut side) = (c1, side_after(size, &specs));
    if rng.gen_bool(0.5) && side >= 2 {
        let c2 = rng.gen_range(2..=4);
        specs.push(LayerSpec::conv(c, c2, 2));
        specs.push(LayerSpec::relu());
        c = c2;
        side -= 1;
    }
    specs.push(LayerSpec::flatten());
    let hidden = rng.gen_range(3..=8);
    specs.push(LayerSpec::linear(c * side * side, hidden));
    specs.push(LayerSpec::relu());
    specs.push(LayerSpec::linear(hidden, 4).frozen());
    ModelGraph::new(input, &specs, seed).unwrap()
}

/// Deactivates a random subset of each prunable layer, keeping at least one filter.
pub fn random_masks<S: Scalar>(model: &mut ModelGraph<S>, rng: &mut ChaCha8Rng) {
    let masks = model
        .masks()
        .into_iter()
        .map(|(layer, mask)| {
            let n = mask.len();
            let keep = rng.gen_range(1..=n);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let mut bits = vec![false; n];
            for &i in &order[..keep] {
                bits[i] = true;
            }
            (layer, FilterMask::from_bits(bits))
        })
        .collect();
    model.set_masks(masks).unwrap();
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn loss(model: &ModelGraph<f64>, x: &aap_core::Tensor<f64>, y: &[usize]) -> f64 {
    let logits = aap_core::nn::model_forward(model, x, false).unwrap().logits;
    aap_core::nn::ops::softmax_cross_entropy(&logits, y).unwrap().0
}

/// Largest relative error between backprop and central differences (step
/// `eps`) over every parameter of random model `seed`, on a batch of 3.
pub fn max_gradient_error(seed: u64, eps: f64) -> f64 {
    let mut model = random_model::<f64>(seed);
    let input = model.input_shape();
    let mut rng = rng(100 + seed);
    let batch = 3;
    let len = batch * input.iter().product::<usize>();
    let x = aap_core::Tensor::from_vec(
        &[batch, input[0], input[1], input[2]],
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let y: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..4)).collect();
    let grads = aap_core::nn::model_backward(&model, &x, &y).unwrap();
    assert!((grads.loss - loss(&model, &x, &y)).abs() < 1e-12);
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let mut worst = 0.0f64;
    for (t, grad) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = model.param_slices()[t][i];
            model.param_slices_mut()[t][i] = orig + eps;
            let plus = loss(&model, &x, &y);
            model.param_slices_mut()[t][i] = orig - eps;
            let minus = loss(&model, &x, &y);
            model.param_slices_mut()[t][i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}
