//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input sequence contains a token id outside the vocabulary.
    #[error("invalid token id {token} for vocabulary of size {vocab}")]
    InvalidToken { token: u32, vocab: u32 },

    /// Weights or derived quantities failed a structural invariant.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Vocabulary too small for a pairwise statistic.
    #[error("degenerate vocabulary: need at least 2 tokens, got {0}")]
    DegenerateVocabulary(u32),

    /// Bad numerical setting (step sizes, tolerances, thresholds).
    #[error("config error: {0}")]
    Config(String),

    /// A pairwise product such as Λ·C_E vanished where a division needs it.
    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    /// Expert evaluation could not extract its parameters from the input.
    #[error("extraction error: {0}")]
    Extraction(String),

    /// Expert is incompatible with the target model.
    #[error("portability error: {0}")]
    Portability(String),

    /// Operation is undefined for the given source kind.
    #[error("unsupported source: {0}")]
    UnsupportedSource(String),

    /// Malformed textual or binary input.
    #[error("parse error: {0}")]
    Parse(String),

    /// Undefined analyzer input (e.g. empty run log).
    #[error("analysis error: {0}")]
    Analysis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
