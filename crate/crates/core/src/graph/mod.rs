//! Masked model representation.
//!
//! A [`ModelGraph`] is an ordered list of layers. Every prunable layer owns a
//! [`FilterMask`] over its output channels (conv) or output units (linear),
//! and is coupled to the next parameterized layer, whose input channels it
//! feeds. The effective network is `mask ⊙ weights`; [`ModelGraph::compact`]
//! materializes it as a physically smaller dense model.

mod compact;
mod presets;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use presets::{lenet300, lenet5, preset, smallconv, Preset};

use crate::error::{Error, Result};
use crate::nn::ops::conv_out_dim;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        in_units: usize,
        out_units: usize,
    },
}

fn one() -> usize {
    1
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Linear { .. })
    }

    /// Output channels (conv) or units (linear).
    pub fn out_filters(&self) -> Option<usize> {
        match *self {
            LayerKind::Conv2d { out_channels, .. } => Some(out_channels),
            LayerKind::Linear { out_units, .. } => Some(out_units),
            _ => None,
        }
    }

    /// Kernel side length; linear layers count as `k = 1`.
    pub fn kernel(&self) -> usize {
        match *self {
            LayerKind::Conv2d { kernel, .. } => kernel,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default)]
    pub prunable: bool,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            kind: LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride: 1,
                padding: 0,
            },
            prunable: true,
        }
    }

    pub fn linear(in_units: usize, out_units: usize) -> Self {
        Self {
            kind: LayerKind::Linear { in_units, out_units },
            prunable: true,
        }
    }

    pub fn relu() -> Self {
        Self {
            kind: LayerKind::Relu,
            prunable: false,
        }
    }

    pub fn maxpool(size: usize) -> Self {
        Self {
            kind: LayerKind::MaxPool2d { size, stride: size },
            prunable: false,
        }
    }

    pub fn flatten() -> Self {
        Self {
            kind: LayerKind::Flatten,
            prunable: false,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.prunable = false;
        self
    }
}

/// One bit per filter; `true` means active.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterMask {
    bits: Vec<bool>,
}

impl FilterMask {
    pub fn all_active(len: usize) -> Self {
        Self {
            bits: vec![true; len],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_active(&self, filter: usize) -> bool {
        self.bits[filter]
    }

    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    /// LSB-first packed representation.
    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn from_packed(bytes: &[u8], len: usize) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        Some(Self {
            bits: (0..len).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect(),
        })
    }
}

/// How a prunable layer's output feeds the next parameterized layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coupling {
    pub consumer: usize,
    /// Consumer input units fed by one producer channel (`h*w` across a
    /// flatten, otherwise 1).
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S: Scalar = f32> {
    pub spec: LayerSpec,
    pub weight: Option<Tensor<S>>,
    pub bias: Option<Vec<S>>,
    pub mask: Option<FilterMask>,
}

/// Effective dimensions of a parameterized layer after masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveCounts {
    pub layer: usize,
    pub active_filters: usize,
    pub active_in: usize,
}

/// Result of [`ModelGraph::prune_filters`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pruned {
    pub pruned: Vec<usize>,
    /// Set when the request would have emptied the layer; carries the layer id.
    pub exhausted: Option<usize>,
}

/// Input shape plus layer specs: everything needed to rebuild a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// First 16 bytes of the SHA-256 of the canonical JSON, in hex.
    pub fn fingerprint(&self) -> String {
        let doc = serde_json::json!({
            "input": self.input_shape,
            "layers": self.layers,
        });
        let digest = Sha256::digest(doc.to_string().as_bytes());
        hex::encode(&digest[..16])
    }

    pub fn build<S: Scalar>(&self, seed: u64) -> Result<ModelGraph<S>> {
        ModelGraph::new(self.input_shape, &self.layers, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<S: Scalar = f32> {
    input_shape: [usize; 3],
    layers: Vec<Layer<S>>,
    shapes: Vec<Vec<usize>>,
    coupling: Vec<Option<Coupling>>,
    producer: Vec<Option<usize>>,
}

impl<S: Scalar> ModelGraph<S> {
    /// Builds a model with PyTorch-style uniform initialization
    /// (`±1/sqrt(fan_in)` for weights and biases).
    pub fn new(input_shape: [usize; 3], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|spec| {
                let (weight, bias) = match spec.kind {
                    LayerKind::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        ..
                    } => {
                        let fan_in = in_channels * kernel * kernel;
                        let shape = [out_channels, in_channels, kernel, kernel];
                        (Some(uniform(&shape, fan_in, &mut rng)), Some(uniform(&[out_channels], fan_in, &mut rng).into_data()))
                    }
                    LayerKind::Linear { in_units, out_units } => (
                        Some(uniform(&[out_units, in_units], in_units, &mut rng)),
                        Some(uniform(&[out_units], in_units, &mut rng).into_data()),
                    ),
                    _ => (None, None),
                };
                Layer {
                    spec: *spec,
                    weight,
                    bias,
                    mask: None,
                }
            })
            .collect();
        Self::from_layers(input_shape, layers)
    }

    /// Assembles a model from explicit layers, validating shapes and deriving
    /// the coupling chain. Missing masks on prunable layers start all-active.
    pub fn from_layers(input_shape: [usize; 3], mut layers: Vec<Layer<S>>) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(Error::invalid(format!("input shape {input_shape:?} has a zero dimension")));
        }
        let shapes = infer_shapes(input_shape, &layers)?;
        let param_layers: Vec<usize> = (0..layers.len()).filter(|&i| layers[i].spec.kind.has_params()).collect();
        let Some(&last_param) = param_layers.last() else {
            return Err(Error::invalid("model has no parameterized layer"));
        };
        if layers[last_param].spec.prunable {
            return Err(Error::invalid(format!(
                "layer {last_param} is the classifier and cannot be prunable"
            )));
        }
        let mut coupling = vec![None; layers.len()];
        let mut producer = vec![None; layers.len()];
        for (&p, &c) in param_layers.iter().zip(param_layers.iter().skip(1)) {
            let group = match (layers[p].spec.kind, layers[c].spec.kind) {
                (LayerKind::Conv2d { .. }, LayerKind::Linear { .. }) => {
                    let flat_in = shapes[c - 1].iter().product::<usize>();
                    flat_in / layers[p].spec.kind.out_filters().unwrap()
                }
                _ => 1,
            };
            producer[c] = Some(p);
            if layers[p].spec.prunable {
                coupling[p] = Some(Coupling { consumer: c, group });
            }
        }
        for (i, layer) in layers.iter_mut().enumerate() {
            if layer.spec.prunable && !layer.spec.kind.has_params() {
                return Err(Error::invalid(format!("layer {i} has no filters to prune")));
            }
            let filters = layer.spec.kind.out_filters();
            match (layer.spec.kind, &layer.weight, &layer.bias) {
                (LayerKind::Conv2d { in_channels, out_channels, kernel, .. }, Some(w), Some(b)) => {
                    let expected = [out_channels, in_channels, kernel, kernel];
                    if w.shape() != expected || b.len() != out_channels {
                        return Err(Error::ShapeMismatch {
                            expected: expected.to_vec(),
                            actual: w.shape().to_vec(),
                        });
                    }
                }
                (LayerKind::Linear { in_units, out_units }, Some(w), Some(b)) => {
                    if w.shape() != [out_units, in_units] || b.len() != out_units {
                        return Err(Error::ShapeMismatch {
                            expected: vec![out_units, in_units],
                            actual: w.shape().to_vec(),
                        });
                    }
                }
                (kind, None, None) if !kind.has_params() => {}
                _ => return Err(Error::invalid(format!("layer {i} parameters do not match its kind"))),
            }
            if layer.spec.prunable {
                let n = filters.unwrap();
                match &layer.mask {
                    Some(m) if m.len() != n => {
                        return Err(Error::invalid(format!("layer {i} mask has {} bits, expected {n}", m.len())))
                    }
                    Some(m) if m.active_count() == 0 => return Err(Error::LayerExhausted { layer: i }),
                    Some(_) => {}
                    None => layer.mask = Some(FilterMask::all_active(n)),
                }
            } else if layer.mask.is_some() {
                return Err(Error::invalid(format!("layer {i} is not prunable but carries a mask")));
            }
        }
        let mut model = Self {
            input_shape,
            layers,
            shapes,
            coupling,
            producer,
        };
        model.apply_masks();
        Ok(model)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &Layer<S> {
        &self.layers[index]
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<S>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Per-example output shape of layer `index`.
    pub fn output_shape(&self, index: usize) -> &[usize] {
        &self.shapes[index]
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map(|s| s.iter().product()).unwrap_or(0)
    }

    pub fn prunable_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].spec.prunable).collect()
    }

    pub fn param_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].spec.kind.has_params())
            .collect()
    }

    pub fn coupling(&self, layer: usize) -> Option<Coupling> {
        self.coupling[layer]
    }

    /// The parameterized layer feeding `layer`, if any.
    pub fn producer(&self, layer: usize) -> Option<usize> {
        self.producer[layer]
    }

    pub fn mask(&self, layer: usize) -> Option<&FilterMask> {
        self.layers[layer].mask.as_ref()
    }

    /// Layer index whose post-ReLU output is the activation of prunable layer `layer`.
    pub fn activation_site(&self, layer: usize) -> usize {
        match self.layers.get(layer + 1) {
            Some(next) if next.spec.kind == LayerKind::Relu => layer + 1,
            _ => layer,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_shape: self.input_shape,
            layers: self.specs(),
        }
    }

    /// Stable hash of the architecture (input shape and layer specs).
    pub fn fingerprint(&self) -> String {
        self.architecture().fingerprint()
    }

    /// Zeroes weights and biases of inactive filters. Idempotent.
    pub fn apply_masks(&mut self) {
        for layer in &mut self.layers {
            let Some(mask) = &layer.mask else { continue };
            let (Some(w), Some(b)) = (layer.weight.as_mut(), layer.bias.as_mut()) else {
                continue;
            };
            let per_filter = w.len() / mask.len();
            for (f, active) in mask.bits().iter().enumerate() {
                if !active {
                    w.data_mut()[f * per_filter..(f + 1) * per_filter].fill(S::zero());
                    b[f] = S::zero();
                }
            }
        }
    }

    /// Deactivates `filters` of `layer`, given in ascending importance order.
    ///
    /// At least one filter always survives: if the request covers every
    /// active filter, the last (most important) one is kept and
    /// [`Pruned::exhausted`] carries the layer id.
    pub fn prune_filters(&mut self, layer: usize, filters: &[usize]) -> Result<Pruned> {
        let Some(mask) = self.layers.get(layer).and_then(|l| l.mask.as_ref()) else {
            return Err(Error::invalid(format!("layer {layer} is not prunable")));
        };
        let mut seen = vec![false; mask.len()];
        for &f in filters {
            if f >= mask.len() || !mask.is_active(f) || seen[f] {
                return Err(Error::invalid(format!(
                    "filter {f} of layer {layer} is not an active, distinct filter"
                )));
            }
            seen[f] = true;
        }
        let mut outcome = Pruned::default();
        let mut selected = filters;
        if filters.len() >= mask.active_count() {
            selected = &filters[..mask.active_count() - 1];
            outcome.exhausted = Some(layer);
        }
        let mask = self.layers[layer].mask.as_mut().unwrap();
        for &f in selected {
            mask.bits[f] = false;
        }
        outcome.pruned = selected.to_vec();
        self.apply_masks();
        Ok(outcome)
    }

    /// Replaces every mask at once (used when restoring checkpoints).
    pub fn set_masks(&mut self, masks: Vec<(usize, FilterMask)>) -> Result<()> {
        for (layer, mask) in masks {
            let expected = self
                .layers
                .get(layer)
                .and_then(|l| l.mask.as_ref())
                .map(|m| m.len())
                .ok_or_else(|| Error::invalid(format!("layer {layer} is not prunable")))?;
            if mask.len() != expected {
                return Err(Error::invalid(format!("mask for layer {layer} has wrong length")));
            }
            if mask.active_count() == 0 {
                return Err(Error::LayerExhausted { layer });
            }
            self.layers[layer].mask = Some(mask);
        }
        self.apply_masks();
        Ok(())
    }

    pub fn masks(&self) -> Vec<(usize, FilterMask)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.mask.clone().map(|m| (i, m)))
            .collect()
    }

    fn active_filters(&self, layer: usize) -> usize {
        match &self.layers[layer].mask {
            Some(m) => m.active_count(),
            None => self.layers[layer].spec.kind.out_filters().unwrap_or(0),
        }
    }

    /// Effective (active filters, active input channels/units) per parameterized layer.
    pub fn active_counts(&self) -> Vec<ActiveCounts> {
        self.param_layers()
            .into_iter()
            .map(|i| {
                let full_in = match self.layers[i].spec.kind {
                    LayerKind::Conv2d { in_channels, .. } => in_channels,
                    LayerKind::Linear { in_units, .. } => in_units,
                    _ => unreachable!(),
                };
                let active_in = match self.producer[i] {
                    Some(p) if self.layers[p].mask.is_some() => {
                        let group = self.coupling[p].map(|c| c.group).unwrap_or(1);
                        self.active_filters(p) * group
                    }
                    _ => full_in,
                };
                ActiveCounts {
                    layer: i,
                    active_filters: self.active_filters(i),
                    active_in,
                }
            })
            .collect()
    }

    /// Visits every parameter tensor (weight, then bias) of every layer.
    pub fn param_slices(&self) -> Vec<&[S]> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let (Some(w), Some(b)) = (&l.weight, &l.bias) {
                out.push(w.data());
                out.push(b.as_slice());
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            if let (Some(w), Some(b)) = (l.weight.as_mut(), l.bias.as_mut()) {
                out.push(w.data_mut());
                out.push(b.as_mut_slice());
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ModelGraph<T> {
        ModelGraph {
            input_shape: self.input_shape,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    weight: l.weight.as_ref().map(|w| w.cast()),
                    bias: l.bias.as_ref().map(|b| b.iter().map(|v| T::from_f64_lossy(v.as_f64())).collect()),
                    mask: l.mask.clone(),
                })
                .collect(),
            shapes: self.shapes.clone(),
            coupling: self.coupling.clone(),
            producer: self.producer.clone(),
        }
    }
}

fn uniform<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<S> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64_lossy(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).expect("shape product")
}

fn infer_shapes<S: Scalar>(input: [usize; 3], layers: &[Layer<S>]) -> Result<Vec<Vec<usize>>> {
    let mut current = input.to_vec();
    let mut shapes = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let bad = |msg: String| Error::invalid(format!("layer {i}: {msg}"));
        current = match layer.spec.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = current[..] else {
                    return Err(bad(format!("conv2d needs a CxHxW input, got {current:?}")));
                };
                if kernel == 0 || in_channels == 0 || out_channels == 0 {
                    return Err(bad("conv2d kernel and channel counts must be >= 1".into()));
                }
                if c != in_channels {
                    return Err(bad(format!("expects {in_channels} channels, input has {c}")));
                }
                match (conv_out_dim(h, kernel, stride, padding), conv_out_dim(w, kernel, stride, padding)) {
                    (Some(oh), Some(ow)) => vec![out_channels, oh, ow],
                    _ => return Err(bad(format!("kernel {kernel} does not fit {h}x{w}"))),
                }
            }
            LayerKind::MaxPool2d { size, stride } => {
                let [c, h, w] = current[..] else {
                    return Err(bad(format!("maxpool2d needs a CxHxW input, got {current:?}")));
                };
                match (conv_out_dim(h, size, stride, 0), conv_out_dim(w, size, stride, 0)) {
                    (Some(oh), Some(ow)) if size > 0 => vec![c, oh, ow],
                    _ => return Err(bad(format!("pool {size} does not fit {h}x{w}"))),
                }
            }
            LayerKind::Relu => current,
            LayerKind::Flatten => vec![current.iter().product()],
            LayerKind::Linear { in_units, out_units } => {
                if current.len() != 1 || current[0] != in_units {
                    return Err(bad(format!("linear expects [{in_units}], got {current:?}")));
                }
                if out_units == 0 {
                    return Err(bad("linear needs at least one output unit".into()));
                }
                vec![out_units]
            }
        };
        shapes.push(current.clone());
    }
    Ok(shapes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet5_coupling_chain() {
        let m = lenet5::<f32>(0).unwrap();
        assert_eq!(m.prunable_layers(), vec![0, 3, 7, 9]);
        assert_eq!(m.coupling(0), Some(Coupling { consumer: 3, group: 1 }));
        assert_eq!(m.coupling(3), Some(Coupling { consumer: 7, group: 16 }));
        assert_eq!(m.coupling(7), Some(Coupling { consumer: 9, group: 1 }));
        assert_eq!(m.coupling(11), None);
        assert_eq!(m.num_classes(), 10);
    }

    #[test]
    fn all_true_masks_leave_model_unchanged() {
        let m = lenet5::<f32>(1).unwrap();
        let mut m2 = m.clone();
        m2.apply_masks();
        assert_eq!(m, m2);
    }

    #[test]
    fn masking_zeroes_filter_slice_and_bias() {
        let mut m = lenet5::<f32>(2).unwrap();
        m.prune_filters(0, &[0]).unwrap();
        let l = m.layer(0);
        assert!(l.weight.as_ref().unwrap().outer(0).iter().all(|&v| v == 0.0));
        assert_eq!(l.bias.as_ref().unwrap()[0], 0.0);
        assert!(l.weight.as_ref().unwrap().outer(1).iter().any(|&v| v != 0.0));
        let once = m.clone();
        m.apply_masks();
        assert_eq!(once, m);
    }

    #[test]
    fn prune_empty_set_is_noop() {
        let mut m = lenet5::<f32>(3).unwrap();
        let before = m.clone();
        let out = m.prune_filters(0, &[]).unwrap();
        assert!(out.pruned.is_empty() && out.exhausted.is_none());
        assert_eq!(before, m);
    }

    #[test]
    fn pruning_two_conv1_filters() {
        let mut m = lenet5::<f32>(4).unwrap();
        m.prune_filters(0, &[1, 4]).unwrap();
        let counts = m.active_counts();
        assert_eq!(counts[0].active_filters, 4);
        assert_eq!(counts[1].active_in, 4);
    }

    #[test]
    fn pruning_every_filter_keeps_one() {
        let mut m = lenet5::<f32>(5).unwrap();
        let out = m.prune_filters(0, &[5, 3, 0, 1, 2, 4]).unwrap();
        assert_eq!(out.exhausted, Some(0));
        assert_eq!(out.pruned, vec![5, 3, 0, 1, 2]);
        assert_eq!(m.mask(0).unwrap().active_indices().collect::<Vec<_>>(), vec![4]);
    }

    #[test]
    fn prune_rejects_inactive_or_duplicate_filters() {
        let mut m = lenet5::<f32>(6).unwrap();
        m.prune_filters(0, &[2]).unwrap();
        assert!(m.prune_filters(0, &[2]).is_err());
        assert!(m.prune_filters(0, &[1, 1]).is_err());
        assert!(m.prune_filters(0, &[6]).is_err());
        assert!(m.prune_filters(1, &[0]).is_err());
    }

    #[test]
    fn fresh_lenet5_active_counts() {
        let m = lenet5::<f32>(0).unwrap();
        let c = m.active_counts();
        assert_eq!((c[0].active_filters, c[0].active_in), (6, 1));
        assert_eq!((c[1].active_filters, c[1].active_in), (16, 6));
        assert_eq!((c[2].active_filters, c[2].active_in), (120, 256));
    }

    #[test]
    fn classifier_cannot_be_prunable() {
        let specs = [LayerSpec::flatten(), LayerSpec::linear(4, 3)];
        assert!(ModelGraph::<f32>::new([1, 2, 2], &specs, 0).is_err());
        let specs = [LayerSpec::flatten(), LayerSpec::linear(4, 3).frozen()];
        assert!(ModelGraph::<f32>::new([1, 2, 2], &specs, 0).is_ok());
    }

    #[test]
    fn packed_mask_roundtrip() {
        let mask = FilterMask::from_bits(vec![true, false, true, true, false, false, true, false, true]);
        let packed = mask.to_packed();
        assert_eq!(packed.len(), 2);
        assert_eq!(FilterMask::from_packed(&packed, 9).unwrap(), mask);
        assert!(FilterMask::from_packed(&packed, 17).is_none());
    }
}
