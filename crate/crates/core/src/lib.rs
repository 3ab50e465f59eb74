//! Robust multi-view stereo: differentiable photometric losses with top-K view
//! selection, a plane-sweep depth solver, depth-map fusion and evaluation,
//! plus a synthetic scene renderer used as ground truth.

mod error;

pub mod geometry;
pub mod imaging;
pub mod loss;
pub mod sweep;
pub mod synth;
pub mod fusion;
pub mod evaluation;
pub mod io;

pub use error::{Error, Result};
