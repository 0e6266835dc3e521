//! Hierarchical windowed-attention vision models, built from scratch.
//!
//! Two attention layouts are implemented over the same block machinery:
//!
//! * `Shifted` — constant window size per stage, with cyclic shift plus an
//!   additive attention mask in every other block (classic Swin wiring).
//! * `SizeVarying` — no shifting at all; cross-window connection comes from
//!   enlarging the window at selected stages (Swin-Free wiring, M = 7,14,14,7
//!   at input 224).
//!
//! The crate deliberately avoids deep-learning frameworks: tensors are dense
//! row-major `Vec`s, attention forward/backward are written out by hand, and
//! every nontrivial path has an independent brute-force oracle in [`verify`].
//! Inference runs in f32; oracles and gradient checks run in f64.

#![forbid(unsafe_code)]
// Dense kernels index by design; iterator rewrites hide the stride math.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::manual_is_multiple_of)]

pub mod attention;
pub mod error;
pub mod model;
pub mod numerics;
pub mod profiler;
pub mod trace;
pub mod verify;
pub mod windowing;

pub use error::{Error, Result};
