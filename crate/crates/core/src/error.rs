// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("operator is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("eigensolver did not converge")]
    EigenNonConvergence,
    #[error("state labels are missing or incomplete")]
    LabelsMissing,
    #[error("time step too large: {cycles:.4} cycles per step (limit {limit})")]
    StepTooLarge { cycles: f64, limit: f64 },
    #[error("negative duration: {0} us")]
    NegativeDuration(f64),
    #[error("no population-transfer maximum found within {0} us")]
    NoTransferMaximum(f64),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error(transparent)]
    Parse(#[from] crate::dsl::ParseError),
    #[error("degenerate trace: {0}")]
    Degenerate(String),
    #[error("baseline fit did not converge after {iterations} iterations")]
    FitNotConverged {
        iterations: usize,
        best: Box<crate::analysis::BaselineFit>,
    },
    #[error("non-uniform sampling axis")]
    NonUniformAxis,
    #[error("empty spectrum")]
    EmptySpectrum,
    #[error("oracle step budget exceeded: {0:.3e} steps")]
    StepBudget(f64),
}
