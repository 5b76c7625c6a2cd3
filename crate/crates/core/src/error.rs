use alloc::string::String;

/// Failure modes shared by every module of the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid state: {0}")]
    State(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("out of domain: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("query budget exhausted ({used}/{k_total} queries used)")]
    BudgetExhausted { used: usize, k_total: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
