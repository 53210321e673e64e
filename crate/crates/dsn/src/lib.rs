//! Std companion to `dsn-core`: file formats, persistence, experiment
//! harness and the pieces behind the `dsn` command-line tool.

pub mod config;
pub mod corpus;
pub mod experiments;
pub mod export;
pub mod idx;
pub mod persist;
pub mod pgm;

pub use dsn_core;
