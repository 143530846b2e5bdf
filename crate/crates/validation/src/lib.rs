//! End-to-end acceptance checks for `polylab`; see `tests/acceptance.rs`.
//!
//! Run one or more criteria with `cargo test -p polylab-validation -- 3 8`.
