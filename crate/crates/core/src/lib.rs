//! Dual-memory template tracker with an attention-LSTM memory controller.
//!
//! The crate is organized around a small deterministic tensor kernel set
//! ([`tensor`]) on which everything else is built:
//!
//! - [`backbone`] — patch sampling and the shared convolutional feature
//!   extractor feeding the search, target, and background branches.
//! - [`attention`] — memory-augmented attention: the search feature is scored
//!   against the previous frame's memory read and pooled into the controller
//!   input.
//! - [`memory`] — slot memories with cosine-addressed reads, gated convex
//!   writes, and layer-normalized LSTM controllers.
//! - [`tracker`] — the per-frame pipeline: attend, read both memories,
//!   subtract, correlate, window, localize, and write back.
//! - [`synth`] — deterministic synthetic sequences with exact ground truth.
//! - [`eval`] — overlap metrics, success curves, and the sequence driver.
//! - [`train`] — tape-based reverse-mode differentiation through the whole
//!   pipeline, verified against central finite differences, plus Adam.
//!
//! All arithmetic is 64-bit. Everything is deterministic given a seed: no
//! global state, no threads, no wall clock. The crate is `no_std`-compatible
//! (with `alloc`); file formats, image codecs, and the CLI live in the
//! companion `dualtrack-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attention;
pub mod backbone;
pub mod error;
pub mod eval;
pub mod image;
pub mod memory;
mod math;
pub mod synth;
pub mod tensor;
pub mod tracker;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{Matrix2, Tensor3};
pub use tracker::{BoundingBox, TrackerConfig, TrackerState};
pub use weights::{ModelConfig, ModelWeights};
