//! Regression-discontinuity estimation in linear mixed models for
//! time-of-day interventions.

pub mod cv;
pub mod diagnostics;
pub mod error;
pub mod frame;
pub mod lmm;
pub mod mediation;
pub mod moderation;
pub mod rd;
pub mod report;
pub mod sim;

pub use error::{Error, ErrorKind, Result};
