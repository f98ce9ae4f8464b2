//! Identification of governing PDEs from gridded space-time data.
//!
//! The pipeline has three stages: build an empirical feature matrix from
//! finite-difference derivatives of the data, run a group-Lasso sparse
//! regression to shortlist candidate terms, then rank candidate supports by
//! re-simulating each model and measuring its time-evolution error against
//! the data.

pub mod denoise;
pub mod derivatives;
pub mod dictionary;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod ident;
pub mod simulate;
pub mod sparse;

mod linalg;

pub use error::{IdentError, Result};
pub use grid::{add_noise, downsample, DownsampleSpec, Field, Grid, NoiseSpec};
