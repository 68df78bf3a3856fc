//! Bayesian CART, simplified BART and BART samplers over discrete feature
//! grids, with an exact-enumeration oracle for the induced Markov chains.
//!
//! The closed-form model math ([`model`]) and the convergence diagnostics
//! ([`diagnostics`]) are generic over the [`Real`] scalar trait. The samplers
//! and the oracle work in `f64`: they draw from an `f64` random stream and
//! the oracle needs log-space accuracy far below `f32` resolution.
//!
//! Features are zero-indexed throughout the API; feature values and split
//! thresholds are one-based (`1..=m_v`). Canonical keys and output files print
//! features one-based.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod mcmc;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod tree;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tree::{Cell, FeatureDomain, Move, MoveKind, Split, TreeStructure};

/// Model hyperparameters in double precision.
pub type ModelConfig64 = model::ModelConfig<f64>;
/// Model hyperparameters in single precision.
pub type ModelConfig32 = model::ModelConfig<f32>;
/// Leaf values in double precision.
pub type LeafValues64 = model::LeafValues<f64>;
/// Leaf values in single precision.
pub type LeafValues32 = model::LeafValues<f32>;
/// Per-leaf sufficient statistics in double precision.
pub type LeafSuffStats64 = model::LeafSuffStats<f64>;
/// Discretized dataset with `f64` responses.
pub type Dataset64 = data::Dataset<f64>;
/// Discretized dataset with `f32` responses.
pub type Dataset32 = data::Dataset<f32>;
