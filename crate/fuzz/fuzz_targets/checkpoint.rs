#![no_main]

use aap_core::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = Checkpoint::decode_header(data);
    if let Ok(ckpt) = Checkpoint::decode(data) {
        let again = Checkpoint::decode(&ckpt.encode()).expect("re-encoded checkpoint decodes");
        assert!(again == ckpt);
    }
});
