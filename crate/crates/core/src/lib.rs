//! Correlation-filter visual tracker operating in a continuous spatial domain.
//!
//! The pipeline interpolates multi-resolution feature maps onto a common
//! periodic grid, trains one filter per feature layer with a structured-margin
//! objective (alternating closed-form slack updates and conjugate-gradient
//! filter refinement), fuses the per-layer confidence maps through pairwise
//! products selected by a KL criterion, and tracks position and scale over a
//! pyramid of cropped samples. A kernelized dual formulation and an OTB-style
//! benchmark harness are included.

pub mod bench;
pub mod cli;
pub mod ensemble;
mod error;
pub mod features;
pub mod operator;
pub mod optimizer;
pub mod selftest;
pub mod spectral;
pub mod tracker;

pub use error::{Error, Result};
