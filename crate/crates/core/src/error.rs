use std::path::PathBuf;

use thiserror::Error;

/// Errors reported by the lattice toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("field invariant violated: {0}")]
    InvalidField(String),

    #[error("spectrum is not Hermitian: imaginary residue {residue:.3e} vs field norm {norm:.3e}")]
    SymmetryViolation { residue: f64, norm: f64 },

    #[error("dual index ({m1}, {m2}) outside the dual set of an n = {n} lattice")]
    OutOfDualSet { m1: i64, m2: i64, n: usize },

    #[error("incompatible grids: coarse n = {coarse}, fine n = {fine}")]
    IncompatibleGrid { coarse: usize, fine: usize },

    #[error("invalid scale grid: {0}")]
    InvalidGrid(String),

    #[error("grid time {0} not found in the scale grid")]
    GridTimeNotFound(String),

    #[error("invalid polynomial: {0}")]
    InvalidPolynomial(String),

    #[error("Littlewood-Paley block {j} outside [-1, {max}]")]
    BlockIndex { j: i32, max: i32 },

    #[error("degenerate importance weights at t = {t}: effective sample size {ess:.3} < 2")]
    DegenerateWeights { t: String, ess: f64 },

    #[error("non-finite field at scale index {scale_index}")]
    NonFinite { scale_index: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("optimizer diverged at step {step}: objective {objective:.6e} vs initial {initial:.6e}")]
    Divergence { step: usize, objective: f64, initial: f64 },

    #[error("MALA acceptance rate {rate:.4} below 1% during burn-in (step too large)")]
    ZeroAcceptance { rate: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad field file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidGeometry(_)
            | Error::InvalidGrid(_)
            | Error::InvalidPolynomial(_)
            | Error::GridTimeNotFound(_)
            | Error::IncompatibleGrid { .. }
            | Error::Format { .. } => 2,
            Error::Io(_) | Error::Json(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
