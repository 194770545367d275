use thiserror::Error;

use crate::arch::Violation;
use crate::optimizer::Infeasibility;

/// Errors raised by the search engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("arithmetic overflow while counting {0}")]
    Overflow(&'static str),

    #[error("initial structure is not valid in the search space: {}", join(.0))]
    InvalidInitial(Vec<Violation>),

    #[error("initial structure is infeasible: {}", join(.0))]
    InfeasibleInitial(Vec<Infeasibility>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
