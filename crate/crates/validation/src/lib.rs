//! Holds the `acceptance` test target only. It lives in its own package so
//! that `cargo test --workspace` reaches it after every other crate.
