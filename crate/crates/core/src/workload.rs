//! Synthetic query sources with analytically known entropy.
//!
//! Three families: uniform over M sequences, Zipf(s) over M ranked
//! sequences, and slotted templates (fixed skeleton, uniform slot values).
//! Uniform and Zipf sequences are rank-encoded; when the vocabulary is large
//! enough each rank gets its own leading token, so distinct support
//! sequences share no prefix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::{Sequence, TokenId};

/// One slotted template: fixed skeleton with slot positions drawing
/// uniformly from a slot alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub skeleton: Vec<TokenId>,
    pub slots: Vec<usize>,
    pub alphabet: Vec<TokenId>,
}

impl Template {
    fn validate(&self) -> Result<()> {
        if self.skeleton.is_empty() {
            return Err(Error::Config("empty template skeleton".into()));
        }
        if self.alphabet.is_empty() && !self.slots.is_empty() {
            return Err(Error::Config("template slots need a non-empty alphabet".into()));
        }
        for &s in &self.slots {
            if s >= self.skeleton.len() {
                return Err(Error::Config(format!(
                    "slot {s} outside skeleton of length {}",
                    self.skeleton.len()
                )));
            }
        }
        Ok(())
    }
}

/// Source specification.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    /// Uniform over `m` rank-encoded sequences of length `seq_len`.
    Uniform { m: usize, seq_len: usize },
    /// Zipf with exponent `s > 1` over `m` rank-encoded sequences.
    Zipf { m: usize, s: f64, seq_len: usize },
    /// Uniform choice of template, uniform slot values.
    Template { templates: Vec<Template> },
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            SourceSpec::Uniform { m, seq_len } => {
                if *m < 1 || *seq_len < 1 {
                    return Err(Error::Config("uniform source needs m ≥ 1, seq_len ≥ 1".into()));
                }
            }
            SourceSpec::Zipf { m, s, seq_len } => {
                if *m < 1 || *seq_len < 1 {
                    return Err(Error::Config("zipf source needs m ≥ 1, seq_len ≥ 1".into()));
                }
                if !(*s > 1.0) {
                    return Err(Error::Config(format!("zipf exponent {s} must exceed 1")));
                }
            }
            SourceSpec::Template { templates } => {
                if templates.is_empty() {
                    return Err(Error::Config("template source needs ≥ 1 template".into()));
                }
                for t in templates {
                    t.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Largest token id the source can emit.
    pub fn max_token(&self, vocab: u32) -> u32 {
        match self {
            SourceSpec::Uniform { m, seq_len } | SourceSpec::Zipf { m, seq_len, .. } => {
                encode_rank(m.saturating_sub(1), *m, *seq_len, vocab)
                    .into_iter()
                    .max()
                    .unwrap_or(0)
            }
            SourceSpec::Template { templates } => templates
                .iter()
                .flat_map(|t| t.skeleton.iter().chain(t.alphabet.iter()))
                .copied()
                .max()
                .unwrap_or(0),
        }
    }

    /// Exact source entropy in bits.
    pub fn analytic_entropy(&self) -> f64 {
        match self {
            SourceSpec::Uniform { m, .. } => (*m as f64).log2(),
            SourceSpec::Zipf { m, s, .. } => {
                let z = zeta_partial(*s, *m);
                let mut h = 0.0;
                for r in 1..=*m {
                    let p = (r as f64).powf(-s) / z;
                    h -= p * p.log2();
                }
                h
            }
            SourceSpec::Template { templates } => {
                let choice = (templates.len() as f64).log2();
                // All templates share the slot structure cost only through
                // their own slots; average over the uniform template choice.
                let slot_bits: f64 = templates
                    .iter()
                    .map(|t| t.slots.len() as f64 * (t.alphabet.len() as f64).log2())
                    .sum::<f64>()
                    / templates.len() as f64;
                choice + slot_bits
            }
        }
    }
}

/// Rank → fixed-width token sequence. When the whole support fits in the
/// vocabulary (`m ≤ |V|`) the leading token carries the rank directly, so
/// distinct support sequences share no prefix; otherwise the rank is spread
/// base-|V| across the width, low digit first.
pub fn encode_rank(rank: usize, m: usize, seq_len: usize, vocab: u32) -> Vec<TokenId> {
    let v = vocab as usize;
    let mut tokens = vec![0u32; seq_len];
    if m <= v {
        tokens[0] = rank as u32;
        for (i, t) in tokens.iter_mut().enumerate().skip(1) {
            *t = (i % v) as u32;
        }
    } else {
        let mut r = rank;
        for t in tokens.iter_mut() {
            *t = (r % v) as u32;
            r /= v;
        }
    }
    tokens
}

/// Width needed for base-|V| rank encoding.
pub fn encoding_width(m: usize, vocab: u32) -> usize {
    let v = vocab as usize;
    let mut width = 1usize;
    let mut cap = v;
    while cap < m {
        cap = cap.saturating_mul(v);
        width += 1;
    }
    width
}

/// Sampling state for one source.
#[derive(Debug, Clone)]
pub struct Source {
    pub spec: SourceSpec,
    rng: ChaCha8Rng,
    /// Inverse-CDF table for Zipf.
    cdf: Vec<f64>,
}

impl Source {
    pub fn new(spec: SourceSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let cdf = match &spec {
            SourceSpec::Zipf { m, s, .. } => {
                let z = zeta_partial(*s, *m);
                let mut acc = 0.0;
                let mut cdf = Vec::with_capacity(*m);
                for r in 1..=*m {
                    acc += (r as f64).powf(-s) / z;
                    cdf.push(acc);
                }
                // Guard against rounding at the top.
                if let Some(last) = cdf.last_mut() {
                    *last = 1.0;
                }
                cdf
            }
            _ => Vec::new(),
        };
        Ok(Source {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cdf,
        })
    }

    /// Draw one i.i.d. sequence.
    pub fn sample(&mut self) -> Sequence {
        match &self.spec {
            SourceSpec::Uniform { m, seq_len } => {
                let rank = self.rng.gen_range(0..*m);
                Sequence::new(encode_rank(rank, *m, *seq_len, u32::MAX))
            }
            SourceSpec::Zipf { m, seq_len, .. } => {
                let u: f64 = self.rng.gen();
                let rank = match self.cdf.binary_search_by(|p| p.partial_cmp(&u).unwrap()) {
                    Ok(i) => i,
                    Err(i) => i,
                };
                Sequence::new(encode_rank(rank.min(self.cdf.len() - 1), *m, *seq_len, u32::MAX))
            }
            SourceSpec::Template { templates } => {
                let t = &templates[self.rng.gen_range(0..templates.len())];
                let mut tokens = t.skeleton.clone();
                for &s in &t.slots {
                    tokens[s] = t.alphabet[self.rng.gen_range(0..t.alphabet.len())];
                }
                Sequence::new(tokens)
            }
        }
    }
}

/// Rank-encoded source wrapper bounded by a vocabulary size.
pub fn sample_with_vocab(source: &mut Source, vocab: u32) -> Sequence {
    match &source.spec {
        SourceSpec::Uniform { m, seq_len } => {
            let rank = source.rng.gen_range(0..*m);
            Sequence::new(encode_rank(rank, *m, *seq_len, vocab))
        }
        SourceSpec::Zipf { m, seq_len, .. } => {
            let u: f64 = source.rng.gen();
            let rank = match source.cdf.binary_search_by(|p| p.partial_cmp(&u).unwrap()) {
                Ok(i) => i,
                Err(i) => i,
            };
            Sequence::new(encode_rank(rank.min(source.cdf.len() - 1), *m, *seq_len, vocab))
        }
        SourceSpec::Template { .. } => source.sample(),
    }
}

/// Partial zeta sum Σ_{r=1..m} r^{-s}.
pub fn zeta_partial(s: f64, m: usize) -> f64 {
    (1..=m).map(|r| (r as f64).powf(-s)).sum()
}

/// Fraction of Zipf mass carried by the top `m_top` ranks, exact partial sum.
pub fn top_m_coverage(spec: &SourceSpec, m_top: usize) -> Result<f64> {
    match spec {
        SourceSpec::Zipf { m, s, .. } => {
            let denom = zeta_partial(*s, *m);
            let num = zeta_partial(*s, m_top.min(*m));
            Ok(num / denom)
        }
        _ => Err(Error::UnsupportedSource("top_m_coverage requires a zipf source".into())),
    }
}
