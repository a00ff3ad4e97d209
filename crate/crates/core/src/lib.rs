//! Blending gridded satellite precipitation with gauge observations through
//! ensembles of regression algorithms.
//!
//! The crate covers feature construction from the four nearest grid points,
//! seven regressors, eleven combiners, skill scores, importance measures, the
//! three-way split protocol and CSV/JSON input and output.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod geo;
pub mod importance;
pub mod io;
pub mod learners;
pub mod pipeline;

pub use data::Matrix;
pub use error::{Error, Result};
