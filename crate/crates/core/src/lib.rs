//! Bayesian cumulative-logit mixed models for three-level ordinal panels.
//!
//! Records are nested as family → individual → repeat. The family and
//! individual random intercepts can follow Bridge/Modified-Bridge laws (so the
//! population-averaged coefficients are an exact rescaling of the conditional
//! ones), Normal laws, or be dropped altogether. Posterior sampling uses a
//! No-U-Turn sampler with windowed diagonal-mass adaptation; post-processing
//! covers marginal coefficients, WAIC, LPML and posterior predictive checks.

pub mod data;
pub mod distributions;
pub mod error;
pub mod inference;
pub mod model;
pub mod posterior;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
