use std::fmt;

use thiserror::Error;

/// A single failed validation rule, tagged with the field path it applies to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub path: String,
    pub rule: String,
}

impl ValidationError {
    pub fn new(path: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.rule)
    }
}

/// Broad category of an [`Error`], used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    NonConvergence,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {}", join(.0))]
    Invalid(Vec<ValidationError>),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension { what: String, expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("constraint {index} is not strictly satisfied (g = {value:e}); the barrier is undefined here")]
    Boundary { index: usize, value: f64 },

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("no convergence after {iterations} iterations (best residual {best_residual:e})")]
    NonConvergence { iterations: usize, best_residual: f64 },

    #[error("oracle seeds disagree by {spread:e} in (P_g, P_d)")]
    OracleDisagreement { spread: f64 },

    #[error("step rejected at t = {t}: {reason}")]
    StepRejected { t: f64, reason: String },

    #[error("singular Jacobian in equilibrium solve")]
    SingularJacobian,

    #[error("Newton iteration diverged (residual {residual:e})")]
    NewtonDiverged { residual: f64 },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn invalid(path: impl Into<String>, rule: impl Into<String>) -> Self {
        Error::Invalid(vec![ValidationError::new(path, rule)])
    }

    pub fn dimension(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            got,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Invalid(_) | Error::Dimension { .. } | Error::Parse(_) | Error::Infeasible(_) => {
                ErrorKind::Validation
            }
            Error::Domain(_)
            | Error::Boundary { .. }
            | Error::StepRejected { .. }
            | Error::SingularJacobian
            | Error::NewtonDiverged { .. } => ErrorKind::Numerical,
            Error::NonConvergence { .. } | Error::OracleDisagreement { .. } => ErrorKind::NonConvergence,
            Error::Io(_) => ErrorKind::Io,
        }
    }
}

fn join(errors: &[ValidationError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
