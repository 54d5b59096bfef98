use std::fmt;

/// Why a binary decoder cannot be identified from bigram statistics.
#[derive(Debug, Clone, PartialEq)]
pub enum Degeneracy {
    /// `B = b bᵀ`: every `(eta, zeta)` with `eta * b0 + zeta * b1 = c0`
    /// produces the same observation marginal.
    RankOne { b0: f64, b1: f64, c0: f64 },
}

impl fmt::Display for Degeneracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Degeneracy::RankOne { b0, b1, c0 } => write!(
                f,
                "bigram matrix is rank one; solutions lie on the line {b0}*eta + {b1}*zeta = {c0}"
            ),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("sequence is empty after normalization")]
    EmptySequence,
    #[error("corpus contains no sequences")]
    EmptyCorpus,
    #[error("reference sequence is empty")]
    EmptyReference,
    #[error("KL divergence is infinite: q is zero at index {index} where p = {p}")]
    InfiniteKl { index: usize, p: f64 },
    #[error("symbol {symbol} is outside the alphabet of size {size}")]
    Domain { symbol: usize, size: usize },
    #[error("singular values {index} and {} are not separated (relative gap {gap:.3e})", index + 1)]
    DegenerateSpectrum { index: usize, gap: f64 },
    #[error("not identifiable: {0}")]
    NonIdentifiable(Degeneracy),
    #[error("loss became non-finite at step {step}")]
    Divergence { step: usize },
    #[error("length {len} exceeds the enumeration limit {max}")]
    TooLarge { len: usize, max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
