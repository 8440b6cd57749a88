//! Near-optimal linear estimation of a linear functional from noisy linear
//! observations over a symmetric convex model set.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: model sets, Minkowski gauges, support values, regularity.
//! - [`noise`]: mean-zero noise models, seeded sampling, whitening and
//!   log-concavity diagnostics.
//! - [`design`]: the deterministic-noise optimal linear estimator and the
//!   null error that certifies it.
//! - [`risk`]: the two global recovery errors (`se` and `or` flavours).
//! - [`oned`]: closed forms for the one-dimensional setting, including the
//!   Rademacher counterexample.
//! - [`verify`]: the near-optimality harness and its problem batteries.
//! - [`config`]: strict JSON problem configuration.
//! - [`output`]: report serialisation with round-trip exact floats.

pub mod config;
pub mod design;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod mc;
pub mod noise;
pub mod oned;
pub mod output;
pub mod risk;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
