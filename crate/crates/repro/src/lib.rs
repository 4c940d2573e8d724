//! Acceptance harness. The checks live in `tests/acceptance.rs` and run with
//! `cargo test -p aap-repro --test acceptance`.
