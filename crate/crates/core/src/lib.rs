//! Training-free structural search for DenseNet-like convolutional networks.
//!
//! Architectures are scored by a structural entropy bound per dense stage,
//! a power-law fit of the per-stage entropy profile, and parameter/FLOP
//! budgets; a seeded population search with power-law-guided space pruning
//! looks for the highest-scoring feasible configuration.
//!
//! * [`arch`]: descriptors, search space, resource estimation
//! * [`entropy`]: stage entropy and effectiveness
//! * [`powerlaw`]: power-law fit, fit-family comparison, ideal targets
//! * [`optimizer`]: objective, feasibility, mutation, pruning, search
//! * [`report`] and [`cli`]: file formats and command-line entry points

pub mod arch;
pub mod cli;
pub mod entropy;
pub mod error;
pub mod optimizer;
pub mod powerlaw;
pub mod report;

pub use error::{Error, Result};
