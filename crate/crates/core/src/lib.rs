//! Average treatment effect on the treated (ATT) estimation under
//! unconfoundedness: overlap diagnostics, trimming, a ten-estimator suite,
//! honest random forests, conditional effects and placebo validation.

pub mod cli;
pub mod dataset;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod forest;
pub mod heterogeneity;
pub mod matching;
pub mod models;
pub mod overlap;
pub mod rng;
pub mod validation;

pub use error::{Error, ErrorKind, Result};
