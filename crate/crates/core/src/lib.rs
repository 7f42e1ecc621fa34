//! Privacy-preserving adapt-then-project LMS over multitask networks.
//!
//! The crate simulates the algorithm and its baselines over Monte-Carlo
//! realizations and evaluates the analytic mean, mean-square and inference
//! privacy recursions under a Gaussian data model.

pub mod datamodel;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod privacy;
pub mod projection;
pub mod seed;
pub mod simulate;
pub mod theory;

pub use error::{Error, Result};
pub use nalgebra;
