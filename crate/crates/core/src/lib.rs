//! Core library for feed-forward 3D geometry experiments: a mixture-of-experts
//! layer with analytic gradients, confidence-based depth supervision filtering,
//! multi-task geometry losses, a k-sigma loss stabilizer, synthetic scene
//! generation, and the full pointmap/depth/pose/normal evaluation protocol.
//!
//! All numerics are 64-bit so that finite-difference gradient checks and
//! brute-force metric oracles are meaningful at tight tolerances.

pub mod depthprior;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod moe;
pub mod numeric;
pub mod stability;
pub mod synth;

pub use error::{Error, Result};
