//! Joint disease mapping over areal units.
//!
//! This crate fits a multivariate spatial Poisson model for the relative
//! risks of several diseases observed on the areas of an adjacency graph.
//! Spatial dependence within each disease follows an intrinsic conditional
//! autoregression on the graph; dependence between diseases comes from a
//! full covariance matrix, so the model borrows strength both across space
//! and across diseases. Inference integrates the latent field out with a
//! Laplace approximation and samples hyperparameters from a Gaussian
//! approximation at their posterior mode.
//!
//! Large study regions can be split into overlapping or disjoint
//! subdomains, fitted independently (and in parallel), and recombined:
//! risk posteriors by subdomain ownership or predictive-weight mixtures,
//! shared parameters by consensus averaging of the subdomain draws.
//!
//! The `mvrisk` binary exposes the full pipeline; the library crates (this
//! one and the C interface built on it) expose the same functionality
//! programmatically.

pub mod cov;
pub mod error;
pub mod graph;
pub mod inference;
pub mod merge;
pub mod pipeline;
pub mod seed;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
