#![no_main]

use aap_core::{Architecture, LayerKind};
use libfuzzer_sys::fuzz_target;

const MAX_DIM: usize = 64;

fn small(arch: &Architecture) -> bool {
    arch.layers.len() <= 16
        && arch.input_shape.iter().all(|&d| d <= MAX_DIM)
        && arch.layers.iter().all(|l| match l.kind {
            LayerKind::Conv2d { in_channels, out_channels, kernel, .. } => {
                in_channels <= MAX_DIM && out_channels <= MAX_DIM && kernel <= 8
            }
            LayerKind::Linear { in_units, out_units } => in_units <= 4096 && out_units <= 256,
            _ => true,
        })
}

fuzz_target!(|data: &[u8]| {
    if let Ok(arch) = serde_json::from_slice::<Architecture>(data) {
        if small(&arch) {
            if let Ok(model) = arch.build::<f32>(0) {
                assert_eq!(model.architecture(), arch);
            }
        }
    }
});
