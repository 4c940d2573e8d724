//! Distance between rewound-and-retrained weights and the original trained weights.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{FilterMask, ModelGraph};
use crate::nn::{train_run, SgdState, TrainConfig};
use crate::tensor::Scalar;

/// L2 distance between `pruned` and `original` over the coordinates that are
/// live under `masks`: weights of active filters reading from active inputs,
/// plus the biases of active filters.
pub fn stability<S: Scalar>(
    pruned: &ModelGraph<S>,
    original: &ModelGraph<S>,
    masks: &[(usize, FilterMask)],
) -> Result<f64> {
    if pruned.fingerprint() != original.fingerprint() {
        return Err(Error::Fingerprint {
            expected: original.fingerprint(),
            found: pruned.fingerprint(),
        });
    }
    let live = |m: &ModelGraph<S>| -> Result<ModelGraph<S>> {
        let mut m = m.clone();
        m.set_masks(masks.to_vec())?;
        Ok(m.compact())
    };
    let (a, b) = (live(pruned)?, live(original)?);
    let sum: f64 = a
        .param_slices()
        .iter()
        .zip(b.param_slices())
        .flat_map(|(x, y)| x.iter().zip(y.iter()))
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub rewind_epoch: usize,
    pub stability: f64,
}

/// For each `(k, W_k)` snapshot: apply `masks`, reset momentum, retrain
/// epochs `k..E` and measure the distance to `original` (`W_E` of the
/// unpruned run).
pub fn stability_sweep<S: Scalar>(
    original: &ModelGraph<S>,
    snapshots: &[(usize, Checkpoint)],
    masks: &[(usize, FilterMask)],
    train: &Dataset,
    config: &TrainConfig,
) -> Result<Vec<StabilityPoint>> {
    snapshots
        .iter()
        .map(|(k, snapshot)| {
            let mut model = original.clone();
            let mut opt = SgdState::new(&model);
            snapshot.restore(&mut model, Some(&mut opt))?;
            model.set_masks(masks.to_vec())?;
            train_run(&mut model, &mut opt, train, None, config, *k..config.total_epochs, &mut |_, _, _| Ok(()))?;
            Ok(StabilityPoint {
                rewind_epoch: *k,
                stability: stability(&model, original, masks)?,
            })
        })
        .collect()
}
