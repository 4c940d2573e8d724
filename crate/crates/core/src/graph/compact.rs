use super::{FilterMask, Layer, LayerKind, LayerSpec, ModelGraph};
use crate::tensor::{Scalar, Tensor};

impl<S: Scalar> ModelGraph<S> {
    fn kept_outputs(&self, layer: usize) -> Vec<usize> {
        match self.mask(layer) {
            Some(m) => m.active_indices().collect(),
            None => (0..self.layer(layer).spec.kind.out_filters().unwrap()).collect(),
        }
    }

    fn kept_inputs(&self, layer: usize, full: usize) -> Vec<usize> {
        match self.producer(layer) {
            Some(p) if self.mask(p).is_some() => {
                let group = self.coupling(p).map(|c| c.group).unwrap_or(1);
                self.kept_outputs(p)
                    .into_iter()
                    .flat_map(|c| c * group..(c + 1) * group)
                    .collect()
            }
            _ => (0..full).collect(),
        }
    }

    /// Physically removes inactive filters and the input slices they fed.
    ///
    /// The result has all-active masks and computes the same function as the
    /// masked model.
    pub fn compact(&self) -> ModelGraph<S> {
        let layers = (0..self.layers().len())
            .map(|i| {
                let layer = self.layer(i);
                let (Some(w), Some(b)) = (&layer.weight, &layer.bias) else {
                    return layer.clone();
                };
                let outs = self.kept_outputs(i);
                let (kind, weight) = match layer.spec.kind {
                    LayerKind::Conv2d {
                        in_channels,
                        kernel,
                        stride,
                        padding,
                        ..
                    } => {
                        let ins = self.kept_inputs(i, in_channels);
                        let kk = kernel * kernel;
                        let mut data = Vec::with_capacity(outs.len() * ins.len() * kk);
                        for &o in &outs {
                            for &c in &ins {
                                let start = (o * in_channels + c) * kk;
                                data.extend_from_slice(&w.data()[start..start + kk]);
                            }
                        }
                        (
                            LayerKind::Conv2d {
                                in_channels: ins.len(),
                                out_channels: outs.len(),
                                kernel,
                                stride,
                                padding,
                            },
                            Tensor::from_vec(&[outs.len(), ins.len(), kernel, kernel], data),
                        )
                    }
                    LayerKind::Linear { in_units, .. } => {
                        let ins = self.kept_inputs(i, in_units);
                        let mut data = Vec::with_capacity(outs.len() * ins.len());
                        for &o in &outs {
                            let row = &w.data()[o * in_units..(o + 1) * in_units];
                            data.extend(ins.iter().map(|&c| row[c]));
                        }
                        (
                            LayerKind::Linear {
                                in_units: ins.len(),
                                out_units: outs.len(),
                            },
                            Tensor::from_vec(&[outs.len(), ins.len()], data),
                        )
                    }
                    _ => unreachable!("parameterized layer"),
                };
                Layer {
                    spec: LayerSpec {
                        kind,
                        prunable: layer.spec.prunable,
                    },
                    weight: Some(weight.expect("selected sizes")),
                    bias: Some(outs.iter().map(|&o| b[o]).collect()),
                    mask: layer.mask.as_ref().map(|_| FilterMask::all_active(outs.len())),
                }
            })
            .collect();
        ModelGraph::from_layers(self.input_shape(), layers).expect("compaction preserves validity")
    }
}
