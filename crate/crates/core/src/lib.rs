//! Monte Carlo laboratory for lower bounds on the smallest singular value of
//! random matrices with independent isotropic, possibly heavy-tailed, rows.

pub mod bounds;
pub mod distributions;
pub mod empirical_process;
pub mod error;
pub mod experiments;
pub mod numeric;
pub mod rademacher;
pub mod seed;
pub mod smallball;
pub mod spectrum;

pub use error::{Error, Result};
