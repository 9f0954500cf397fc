//! Robust factor-analysis estimation for heavy-tailed data.
//!
//! Observations are modeled as multivariate Student's t with a scale matrix
//! of the form Σ = BBᵀ + Ψ (B low-rank, Ψ diagonal). Parameters are fitted by
//! a generalized EM loop ([`rfa::fit_gem`]) or its parameter-expanded variant
//! ([`rfa::fit_px_em`]); incomplete rows are supported by the GEM loop.
//!
//! The crate also contains the competitor estimators, a synthetic experiment
//! harness, and a rolling minimum-variance portfolio backtest.

pub mod backtest;
pub mod baselines;
pub mod error;
pub mod experiments;
pub mod gfa;
pub(crate) mod linalg;
pub mod model;
pub mod rfa;
pub mod seed;
pub mod special;
pub mod student_t;

pub use error::{Error, Result};
pub use gfa::{GfaProblem, GfaSolution, InnerMethod};
pub use model::{Dataset, FactorTParams, NormalizedErrors};
pub use rfa::{FitOptions, FitReport};
