//! Library half of the `mrac` experiment runner: the on-disk config schema
//! and the artifact writers. The binary in `main.rs` wires these to the
//! command line; tests drive them directly.

pub mod artifacts;
pub mod config;
