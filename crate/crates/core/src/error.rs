use thiserror::Error;

/// Errors raised by the solver. Every variant names the operation that raised it.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MfgError {
    #[error("{op}: non-finite volatility at step {step}, path {path}")]
    Simulation {
        op: &'static str,
        step: usize,
        path: usize,
    },

    /// A model broke one of its declared contracts (drift bound, finiteness, ...).
    #[error("{op}: model contract violation: {detail}")]
    ContractViolation { op: &'static str, detail: String },

    #[error("{op}: invalid usage: {detail}")]
    Usage { op: &'static str, detail: String },

    #[error("{op}: every candidate control has a non-finite reward")]
    Infeasible { op: &'static str },

    #[error("{op}: singular regression at step {step}")]
    SingularRegression { op: &'static str, step: usize },

    #[error("{op}: non-finite value: {detail}")]
    NonFinite { op: &'static str, detail: String },

    #[error("{op}: unsupported model feature: {detail}")]
    Unsupported { op: &'static str, detail: String },

    #[error("{op}: i/o failure: {detail}")]
    Io { op: &'static str, detail: String },
}

impl MfgError {
    pub fn usage(op: &'static str, detail: impl Into<String>) -> Self {
        MfgError::Usage {
            op,
            detail: detail.into(),
        }
    }

    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        MfgError::ContractViolation {
            op,
            detail: detail.into(),
        }
    }

    pub fn non_finite(op: &'static str, detail: impl Into<String>) -> Self {
        MfgError::NonFinite {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(op: &'static str, err: impl std::fmt::Display) -> Self {
        MfgError::Io {
            op,
            detail: err.to_string(),
        }
    }

    /// True for errors that signal a broken model contract rather than bad input.
    pub fn is_contract_violation(&self) -> bool {
        matches!(
            self,
            MfgError::ContractViolation { .. }
                | MfgError::NonFinite { .. }
                | MfgError::Simulation { .. }
                | MfgError::Infeasible { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, MfgError>;
