//! Joint estimation of time-varying epidemic reproduction numbers across
//! territories and of the connectivity graph coupling them.
//!
//! The library layers, bottom to top: model primitives ([`model`]),
//! the primal-dual solver for reproduction numbers under a fixed graph
//! ([`prox`]), graph Laplacian types and the weight-learning quadratic
//! program ([`graph`], [`qp`]), the alternating joint driver ([`joint`]),
//! baseline estimators ([`baselines`]), synthetic data generation
//! ([`synthetic`]), evaluation metrics and the benchmark harness
//! ([`metrics`], [`bench`]), and data ingestion plus run manifests ([`io`]).

pub mod baselines;
pub mod bench;
pub mod error;
pub mod graph;
pub mod io;
pub mod joint;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod prox;
pub mod qp;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{
    data_fidelity, infectiousness, infectiousness_with_history, kl_term, CountMatrix,
    Infectiousness, ReproMatrix, ScaleParams, SerialInterval,
};
