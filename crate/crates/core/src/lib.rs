//! Deep symbolic network core: a layered dictionary of visual symbols learned
//! from pixel data by singularity-based region isolation and threshold-gated
//! clustering, plus the inference and generation machinery that uses it.
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats and the CLI live
//! in the companion `dsn` crate.
//!
//! The main pieces:
//!
//! * [`network`] — symbols, typed links, probability tables, the DAG invariants.
//! * [`image`] — grayscale images and bilinear resampling.
//! * [`signal`] — singularity detection, bounding boxes, canonical data pieces.
//! * [`operator`] — identifying operators: cosine templates with transform
//!   search, blurring, absorption and Boolean decision trees.
//! * [`learn`] — the layer-by-layer unsupervised clustering algorithm and
//!   supervised threshold tuning.
//! * [`infer`] — bottom-up recognition, Bayesian decision over link paths and
//!   generative rendering.
//! * [`synth`] — a hand-built shape library and corpus factory used as the
//!   ground-truth oracle throughout the test suites.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod image;
pub mod infer;
pub mod learn;
pub mod network;
pub mod operator;
pub mod render;
pub mod signal;
pub mod stats;
pub mod synth;

mod math;

pub use image::Image;
pub use network::{Symbol, SymbolId, SymbolInstance, SymbolNetwork};
