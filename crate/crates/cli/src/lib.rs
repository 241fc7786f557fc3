//! Configuration, presets, and run drivers behind the `sgswe` binary,
//! exposed as a library so integration suites can execute the same runs
//! in-process.

pub mod config;
pub mod convergence;
pub mod expr;
pub mod output;
pub mod presets;
pub mod runner;
