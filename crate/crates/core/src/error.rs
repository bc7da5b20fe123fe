use thiserror::Error;

use crate::operator::{Factor, HilbertLayout};

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible layouts: {0}")]
    IncompatibleLayouts(String),

    #[error("layout mismatch: expected {expected:?}, found {found:?}")]
    LayoutMismatch {
        expected: HilbertLayout,
        found: HilbertLayout,
    },

    #[error("matrix of dimension {found} does not fit layout of dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("factor {factor:?} is not part of layout {layout:?}")]
    InvalidFactor {
        factor: Factor,
        layout: HilbertLayout,
    },

    #[error("invalid factor set: {0}")]
    InvalidFactorSet(String),

    #[error("operator is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("frame mismatch: builder expects {expected}, config has {found}")]
    FrameMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("integration failed at t = {time:.6e}: {reason}")]
    Integration { time: f64, reason: String },

    #[error("steady state not reached: residual {residual:.3e} > {tolerance:.3e} after model time {elapsed:.3e}")]
    NotConverged {
        residual: f64,
        tolerance: f64,
        elapsed: f64,
    },

    #[error("analytic X-state formula inapplicable: {0}")]
    FormulaInapplicable(String),

    #[error("undefined for vacuum field (mean photon number {0:.3e})")]
    VacuumField(f64),

    #[error("truncation did not converge below n_max = {0}")]
    TruncationNotConverged(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
