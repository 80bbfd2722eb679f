use std::fmt;

/// Errors produced by the library. The CLI maps these onto its exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    /// A range-equation denominator vanished off the unperturbed shell.
    /// This signals a resonant (non-Diophantine) frequency vector.
    #[error("resonant mode: zero denominator at component {j}, mode {nu}")]
    ResonantMode { j: usize, nu: ModeRepr },
    #[error("numeric instability: {0}")]
    Numeric(String),
    #[error("assertion failed: {0}")]
    Assertion(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Printable copy of an integer mode vector, kept separate from the main
/// `Mode` type so the error enum stays free of generic parameters.
#[derive(Debug, Clone)]
pub struct ModeRepr(pub Vec<i64>);

impl fmt::Display for ModeRepr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}
