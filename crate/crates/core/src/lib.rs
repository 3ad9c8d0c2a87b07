//! Excess mortality estimation from age- and sex-stratified monthly death
//! counts.
//!
//! The crate fits a quasi-Poisson log-linear model to a pre-pandemic baseline
//! window, projects expected deaths forward, propagates coefficient
//! uncertainty by Monte-Carlo sampling and benchmarks the result against a
//! linear trend on the directly standardised mortality rate.

pub mod datamodel;
pub mod design;
pub mod error;
pub mod glm;
pub mod linalg;
pub mod pipeline;
pub mod smr;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, ErrorKind, Result};
