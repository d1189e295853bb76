//! Causal mediation analysis for zero-inflated mediators.
//!
//! Fits a joint model for a continuous outcome and a zero-inflated Beta
//! mediator (e.g. microbiome relative abundance) by maximum likelihood,
//! accounting for false zeros below the detection limit. The natural
//! indirect effect is decomposed into a numeric-change component and a
//! presence-change component, with delta-method confidence intervals.
//! Multi-taxon screening with Benjamini-Hochberg FDR control and a
//! simulation harness are built on top.

pub mod cli;
pub mod dist;
pub mod effects;
pub mod estimate;
pub mod model;
pub mod quad;
pub mod screen;
pub mod simulate;

/// Scalar type used by the estimation and screening pipeline. The numeric
/// kernels in [`dist`] and [`quad`] are generic over `num_traits::Float`;
/// everything downstream is instantiated at `f64`.
pub type Real = f64;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MedZimError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("quadrature failed to converge for record {index}: {detail}")]
    Quadrature { index: usize, detail: String },
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("input error: {0}")]
    Ingest(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MedZimError>;
