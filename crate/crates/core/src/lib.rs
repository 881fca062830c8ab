//! Stochastic observability of finite-state hidden Markov models through the
//! duality between nonlinear filtering and backward stochastic control.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`] and [`linalg`]: validated `(A, H)` models, measures, matrix
//!   exponential and numerical rank.
//! - [`observability`]: the algebraic closure test, its brute-force oracle,
//!   the Kalman test, injectivity and unobservable directions.
//! - [`simulate`]: CTMC paths, observation paths and reference Brownian paths.
//! - [`filter`]: Zakai/Wonham propagation and the Zakai fundamental matrix.
//! - [`duality`]: the dual BSDE, its forward representation, the adjoint
//!   identity, the empirical controllable space and the terminal estimator.
//! - [`diagnostics`]: filter indistinguishability and relative-entropy
//!   experiments.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod diagnostics;
pub mod duality;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod observability;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::{matrix_exponential, numerical_rank, Subspace, DEFAULT_RANK_TOL};
pub use model::{validate_model, Model, ProbabilityMeasure, SignedMeasure};
pub use observability::{analyze, ObservabilityReport};
