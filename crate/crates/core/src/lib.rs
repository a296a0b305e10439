//! Certified inference caching at desk scale.
//!
//! The crate assembles, bottom up:
//!
//! - [`model`]: a small deterministic pre-norm transformer used as the base
//!   model, with forward passes, token embeddings, and finite-difference
//!   Jacobian/Hessian probes at arbitrary sequence positions.
//! - [`lipschitz`]: per-layer and end-to-end Lipschitz certificates computed
//!   from the weights alone, plus the structured-task lower bound and an
//!   empirical effective-Lipschitz probe.
//! - [`trie`]: a probabilistic prefix trie over observed sequences carrying
//!   empirical probabilities, the trie distance, heavy-node and frontier
//!   extraction, and per-position surprisal.
//! - [`expert`]: parametrized experts (constant, linear-corrected, primitive,
//!   small MLP), routing radii, self-certification checks, and a canonical
//!   bit-exact serialization used for over-the-air accounting.
//! - [`engine`]: the inference system proper — any-match routing over the
//!   trie, online expert creation from observed misses, audit sampling, and
//!   the degenerate router/prefix-cache constructions.
//! - [`workload`]: synthetic query sources with analytically known entropy.
//! - [`fleet`]: multi-unit simulation sharing one library, with per-day
//!   update deltas and optional differential-privacy noising.
//! - [`analysis`]: post-hoc analyzers — growth fits, occupancy oracles,
//!   energy ratios, attention-drop cascade probes, and demand profiles.
//!
//! Numeric kernels ([`linalg`], [`model`], [`lipschitz`]) are generic over
//! the scalar type via [`scalar::Scalar`]; the system layers run on `f64`
//! through the aliases below.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod expert;
pub mod fleet;
pub mod linalg;
pub mod lipschitz;
pub mod model;
pub mod scalar;
pub mod trie;
pub mod workload;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar for the system layers (serialization is 64-bit throughout).
pub type Float = f64;

/// The base model instantiated at the default scalar.
pub type Model = model::TransformerModel<Float>;
/// Model configuration at the default scalar.
pub type ModelConfig = model::ModelConfig<Float>;
/// Lipschitz certificate at the default scalar.
pub type Certificate = lipschitz::LipschitzCertificate<Float>;
/// Dense matrix at the default scalar.
pub type Matrix = linalg::Mat<Float>;

/// Token id within the model vocabulary.
pub type TokenId = u32;

/// A query sequence: non-empty list of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence(pub Vec<TokenId>);

impl Sequence {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Sequence(tokens)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    /// Length of the longest common prefix with `other`.
    pub fn common_prefix_len(&self, other: &Sequence) -> usize {
        self.0
            .iter()
            .zip(other.0.iter())
            .take_while(|(a, b)| a == b)
            .count()
    }
}

impl std::fmt::Display for Sequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for t in &self.0 {
            if !first {
                write!(f, " ")?;
            }
            write!(f, "{t}")?;
            first = false;
        }
        Ok(())
    }
}

impl std::str::FromStr for Sequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens = s
            .split_whitespace()
            .map(|t| {
                t.parse::<TokenId>()
                    .map_err(|_| Error::Parse(format!("bad token id {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if tokens.is_empty() {
            return Err(Error::Parse("empty sequence line".into()));
        }
        Ok(Sequence(tokens))
    }
}
