#![no_main]

use aap_core::data::idx::{decode_maybe_gz, parse_idx};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(raw) = decode_maybe_gz(data) {
        if let Ok(array) = parse_idx(&raw) {
            assert_eq!(array.dims.iter().product::<usize>(), array.data.len());
        }
    }
});
