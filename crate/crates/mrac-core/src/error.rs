//! Error taxonomy for the simulation library.
//!
//! The variants map onto how callers are expected to react: `Config` and
//! `Shape`/`NonFinite` mean the request was malformed, `NotHurwitz` means the
//! gains cannot be certified, and `Diverged` means a simulation blew up at a
//! known time.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input that must be finite contained a NaN or infinity.
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    /// Operands whose dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A structurally invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Stability certification failed: an eigenvalue with nonnegative real
    /// part. `re`/`im` identify the offending eigenvalue.
    #[error("matrix is not Hurwitz: eigenvalue {re:.6e} {im:+.6e}i has real part >= -1e-9")]
    NotHurwitz { re: f64, im: f64 },

    /// A numerical routine could not produce a trustworthy result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A simulation produced a non-finite state; `t` is the time of the step
    /// that failed.
    #[error("simulation diverged at t = {t:.6} s: {what}")]
    Diverged { t: f64, what: String },

    /// An operation that needs at least one sample received none.
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
