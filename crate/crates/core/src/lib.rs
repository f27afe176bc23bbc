//! Numerical laboratory for magnetic geodesic flows on closed surfaces in the
//! strong-field regime.

pub mod error;
pub mod expr;
pub mod geometry;
pub mod jet;
pub mod magflow;
pub mod ode;
pub mod reduced;
pub mod section;
pub mod special;
pub mod cli;
pub mod config;

pub use error::{Error, Result};
