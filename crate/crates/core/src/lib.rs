//! Targeted random projection (TARP) regression.
//!
//! Predictors are screened at random with probabilities driven by their
//! marginal correlation with the response, compressed either by a sparse
//! three-point random matrix (RIS-RP) or by the leading right singular
//! vectors of the screened design (RIS-PCR), and fed to an exact
//! normal/inverse-gamma conjugate regression. Many such replicates are
//! aggregated into point predictions and prediction intervals.
//!
//! Module map:
//!
//! * [`data`]: dataset representation, standardization, CSV ingestion.
//! * [`screening`]: marginal utilities, inclusion probabilities, the
//!   screening mask.
//! * [`projection`]: projection matrix generation and compression.
//! * [`posterior`]: conjugate posterior, predictive intervals, evidence and
//!   the probit Gibbs sampler.
//! * [`ensemble`]: replicate orchestration and aggregation.
//! * [`simgen`]: the four simulation schemes plus a binary toy.
//! * [`metrics`]: MSPE, coverage, width, misclassification, AUC, calibration.
//! * [`harness`]: multi-dataset benchmark and screening reports.
//! * [`config`]: the flat `key = value` run configuration format.

pub mod config;
pub mod data;
pub mod dist;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod posterior;
pub mod projection;
pub mod rng;
pub mod screening;
pub mod simgen;

pub use error::{Result, TarpError};

pub use nalgebra::{DMatrix, DVector};
