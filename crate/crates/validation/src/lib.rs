//! Holds the `acceptance` test target. It lives in its own package so that a
//! red criterion does not stop the rest of `cargo test --workspace`: cargo
//! runs packages in name order and this one comes last.
