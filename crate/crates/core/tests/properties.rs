mod common;

use aap_core::accounting::{local_thresholds, reductions, CostTable, Goal};
use aap_core::attention::{attention_value, AttentionFn};
use aap_core::checkpoint::Checkpoint;
use aap_core::nn::{model_forward, SgdState};
use aap_core::Tensor;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn compaction_preserves_outputs(model_seed in 0u64..10_000, mask_seed in 0u64..10_000) {
        let mut model = common::random_model::<f64>(model_seed);
        common::random_masks(&mut model, &mut common::rng(mask_seed));
        let compact = model.compact();
        let [c, h, w] = model.input_shape();
        let mut rng = common::rng(mask_seed ^ 0x5eed);
        let x = Tensor::from_vec(&[3, c, h, w], (0..3 * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let a = model_forward(&model, &x, false).unwrap().logits;
        let b = model_forward(&compact, &x, false).unwrap().logits;
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() <= 1e-10 * (1.0 + p.abs()));
        }
        prop_assert_eq!(CostTable::of(&model).total_params, CostTable::of(&compact).total_params);
        prop_assert_eq!(CostTable::of(&model).total_flops, CostTable::of(&compact).total_flops);
    }

    #[test]
    fn local_thresholds_split_the_global_one(model_seed in 0u64..10_000, t in 0.0f64..10.0) {
        let model = common::random_model::<f32>(model_seed);
        let table = CostTable::of(&model);
        for goal in [Goal::Params, Goal::Flops] {
            let local = local_thresholds(&table, t, goal);
            let sum: f64 = local.iter().map(|&(_, v)| v).sum();
            prop_assert!((sum - t).abs() <= 1e-9 * (1.0 + t));
            prop_assert!(local.iter().all(|&(_, v)| v >= 0.0));
        }
    }

    #[test]
    fn masking_only_reduces_cost(model_seed in 0u64..10_000, mask_seed in 0u64..10_000) {
        let mut model = common::random_model::<f32>(model_seed);
        let baseline = CostTable::of(&model);
        common::random_masks(&mut model, &mut common::rng(mask_seed));
        let r = reductions(&CostTable::of(&model), &baseline);
        prop_assert!((0.0..100.0).contains(&r.params_pct));
        prop_assert!((0.0..100.0).contains(&r.flops_pct));
    }

    #[test]
    fn attention_is_non_negative_and_ordered(map in prop::collection::vec(-5.0f64..5.0, 1..64), p in prop::sample::select(vec![1.0, 2.0, 4.0])) {
        let mean = attention_value(&map, AttentionFn::Mean, p).unwrap();
        let max = attention_value(&map, AttentionFn::Max, p).unwrap();
        let sum = attention_value(&map, AttentionFn::Sum, p).unwrap();
        prop_assert!(mean >= 0.0 && mean <= max * (1.0 + 1e-12) && max <= sum * (1.0 + 1e-12));
    }

    #[test]
    fn checkpoint_encoding_roundtrips(model_seed in 0u64..10_000, mask_seed in 0u64..10_000, epoch in 0usize..100) {
        let mut model = common::random_model::<f32>(model_seed);
        common::random_masks(&mut model, &mut common::rng(mask_seed));
        let opt = SgdState::new(&model);
        let ckpt = Checkpoint::capture(&model, Some(&opt), epoch, 3, serde_json::json!({"k": mask_seed}));
        let bytes = ckpt.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        prop_assert!(back == ckpt);
        prop_assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn truncated_checkpoints_are_rejected(model_seed in 0u64..1000, at in any::<prop::sample::Index>()) {
        let model = common::random_model::<f32>(model_seed);
        let bytes = Checkpoint::capture(&model, None, 0, 0, serde_json::Value::Null).encode();
        let cut = at.index(bytes.len());
        prop_assert!(Checkpoint::decode(&bytes[..cut]).is_err());
    }
}
