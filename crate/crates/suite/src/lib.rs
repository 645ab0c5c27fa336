//! Acceptance criteria for the workspace live in `tests/acceptance.rs`; run them
//! with `cargo test -p evmpc-suite --test acceptance`.
