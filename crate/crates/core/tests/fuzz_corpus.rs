//! Replays the checked-in fuzz corpus through the same entry points the
//! fuzz targets exercise.

use std::path::PathBuf;

use aap_core::checkpoint::Checkpoint;
use aap_core::data::idx::{decode_maybe_gz, parse_idx};
use aap_core::Architecture;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus for {target}");
    out
}

#[test]
fn idx_seeds() {
    for (name, bytes) in seeds("idx") {
        let parsed = decode_maybe_gz(&bytes).and_then(|raw| parse_idx(&raw));
        assert_eq!(parsed.is_ok(), !name.starts_with("truncated"), "{name}");
        if let Ok(a) = parsed {
            assert_eq!(a.dims.iter().product::<usize>(), a.data.len());
        }
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("checkpoint") {
        match Checkpoint::decode(&bytes) {
            Ok(c) => assert_eq!(c.encode(), bytes, "{name}"),
            Err(_) => assert!(name.starts_with("truncated"), "{name}"),
        }
    }
}

#[test]
fn architecture_seeds() {
    for (name, bytes) in seeds("architecture") {
        let arch: Architecture = serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        let model = arch.build::<f32>(0).unwrap();
        assert_eq!(model.architecture(), arch, "{name}");
    }
}
