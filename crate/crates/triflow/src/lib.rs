//! Three-phase distribution power flow toolkit.
//!
//! The crate models an unbalanced distribution feeder as a partitioned complex
//! admittance system, solves the exact power flow by fixed-point iteration,
//! and builds linear voltage models whose anchor-blend coefficients are fitted
//! from operating samples. On top of that it provides robust (Huber) training
//! against bad data, forgetting-factor weighting, and a reactive-power
//! support-range evaluation at the point of common coupling via polyhedral
//! projection.
//!
//! See the `examples/` directory for one runnable walk-through per capability;
//! the `triflow` binary exposes the same pipeline as batch subcommands.

pub mod cli;
pub mod data;
pub mod eval;
pub mod model;
pub mod network;
pub mod pf;
pub mod qrange;
mod simplex;
pub mod trainer;

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for all toolkit operations.
#[derive(Debug)]
pub enum Error {
    /// File system failure.
    Io(std::io::Error),
    /// Malformed input file (feeder, samples, model, limits, config).
    Format(String),
    /// Network structure violates a precondition (disconnected graph,
    /// slack count, phase mismatch between branch terminals).
    Topology(String),
    /// A matrix that must be invertible is singular.
    SingularSystem(String),
    /// Iteration failed to reach its tolerance.
    NonConvergence { iterations: usize, detail: String },
    /// Light and heavy anchor states coincide everywhere.
    UnidentifiableAnchors,
    /// No training sample distinguishes the anchors for this node-phase.
    UnidentifiableElement { index: usize },
    /// The constraint polyhedron has no feasible point.
    Infeasible,
    /// Variable-elimination budget exceeded.
    VariableBudget { vars: usize, limit: usize },
    /// Vector or matrix dimensions disagree.
    DimensionMismatch { expected: usize, got: usize },
    /// A scalar argument violates its documented range.
    InvalidParameter(String),
}

impl Error {
    /// Stable machine-readable error code, used by the CLI diagnostic stream.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Format(_) => "format",
            Error::Topology(_) => "topology",
            Error::SingularSystem(_) => "singular_system",
            Error::NonConvergence { .. } => "non_convergence",
            Error::UnidentifiableAnchors => "unidentifiable_anchors",
            Error::UnidentifiableElement { .. } => "unidentifiable_element",
            Error::Infeasible => "infeasible",
            Error::VariableBudget { .. } => "variable_budget",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
        }
    }

    /// True for failures of the numerics rather than of the invocation.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem(_)
                | Error::NonConvergence { .. }
                | Error::UnidentifiableAnchors
                | Error::UnidentifiableElement { .. }
                | Error::Infeasible
                | Error::VariableBudget { .. }
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Topology(msg) => write!(f, "topology error: {msg}"),
            Error::SingularSystem(msg) => write!(f, "singular system: {msg}"),
            Error::NonConvergence { iterations, detail } => {
                write!(f, "no convergence after {iterations} iterations: {detail}")
            }
            Error::UnidentifiableAnchors => {
                write!(f, "anchor states coincide in every element")
            }
            Error::UnidentifiableElement { index } => {
                write!(
                    f,
                    "node-phase {index} is unidentifiable from the training set"
                )
            }
            Error::Infeasible => write!(f, "constraint system is infeasible"),
            Error::VariableBudget { vars, limit } => {
                write!(
                    f,
                    "{vars} variables exceed the elimination budget of {limit}"
                )
            }
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
