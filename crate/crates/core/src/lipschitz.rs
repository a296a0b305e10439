//! Weight-derived Lipschitz certificates.
//!
//! Everything here is computed from the weights alone — no inference on the
//! certified path. The per-layer coupling constant bounds how much a
//! one-position embedding perturbation can grow through the attention and
//! MLP residual updates; the end-to-end constant is the product across
//! layers times the unembedding operator norm.
//!
//! The LayerNorm factor uses a configured variance floor rather than the raw
//! stabilizer: the floor defaults to half the smallest post-stabilizer
//! standard deviation observed on a calibration batch (the half covers the
//! second term of the normalization Jacobian), clamped from below by the
//! stabilizer itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::TransformerModel;
use crate::scalar::Scalar;
use crate::Sequence;

pub use crate::linalg::operator_norm;

/// Per-layer operator norms and the coupling constant.
#[derive(Debug, Clone)]
pub struct LayerConstants<S> {
    pub layer: usize,
    pub w_q_norm: S,
    pub w_k_norm: S,
    pub w_v_norm: S,
    pub w_o_norm: S,
    /// Product of MLP stage norms times the activation Lipschitz constant.
    pub w_mlp_norm: S,
    /// Bound on value-vector norms: ‖W_V‖ · γ · √d_model.
    pub v_max: S,
    pub l_attn: S,
    /// Attention-residual half: 1 + L_attn·γ/ε.
    pub attn_factor: S,
    /// MLP-residual half: 1 + ‖W_MLP‖·γ/ε.
    pub mlp_factor: S,
    /// Coupling constant `attn_factor · mlp_factor`; ≥ 1 by construction.
    pub kappa: S,
}

/// End-to-end certificate.
#[derive(Debug, Clone)]
pub struct LipschitzCertificate<S> {
    pub layers: Vec<LayerConstants<S>>,
    /// Operator norm of the tied unembedding; a factor of `lambda`.
    pub unembed_norm: S,
    /// End-to-end constant: `unembed_norm · ∏ κ`.
    pub lambda: S,
    /// Context length the √n attention factor was evaluated at.
    pub context_len: usize,
    pub activation_lipschitz: S,
    /// Variance floor used in the LayerNorm factor.
    pub eps_ln_eff: S,
    /// Overflowed to infinity; all derived radii are vacuous.
    pub vacuous: bool,
}

impl<S: Scalar> LipschitzCertificate<S> {
    /// Recompute `unembed_norm · ∏ κ` in layer order.
    pub fn product(&self) -> S {
        self.layers
            .iter()
            .fold(self.unembed_norm, |acc, l| acc * l.kappa)
    }

    /// Structured text record: layer table plus the end-to-end constant and
    /// the settings it was computed under.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("layer  |W_Q|        |W_K|        |W_V|        |W_O|        |W_MLP|      L_attn       kappa\n");
        for l in &self.layers {
            out.push_str(&format!(
                "{:<5}  {:<11.5e}  {:<11.5e}  {:<11.5e}  {:<11.5e}  {:<11.5e}  {:<11.5e}  {:.5e}\n",
                l.layer,
                l.w_q_norm.to_f64_lossy(),
                l.w_k_norm.to_f64_lossy(),
                l.w_v_norm.to_f64_lossy(),
                l.w_o_norm.to_f64_lossy(),
                l.w_mlp_norm.to_f64_lossy(),
                l.l_attn.to_f64_lossy(),
                l.kappa.to_f64_lossy(),
            ));
        }
        out.push_str(&format!("unembed_norm = {:.9e}\n", self.unembed_norm.to_f64_lossy()));
        out.push_str(&format!("lambda = {:.9e}\n", self.lambda.to_f64_lossy()));
        out.push_str(&format!(
            "context_len = {}\nactivation_lipschitz = {}\neps_ln_eff = {:.9e}\nvacuous = {}\n",
            self.context_len,
            self.activation_lipschitz.to_f64_lossy(),
            self.eps_ln_eff.to_f64_lossy(),
            self.vacuous
        ));
        out
    }
}

/// How the LayerNorm variance floor is obtained.
#[derive(Debug, Clone, Copy)]
pub enum VarianceFloor<S> {
    /// Observe a calibration batch of seeded random sequences.
    Calibrated { batch: usize },
    /// Use the given value directly.
    Fixed(S),
}

/// Certificate computation settings.
#[derive(Debug, Clone, Copy)]
pub struct LipschitzOptions<S> {
    pub floor: VarianceFloor<S>,
    pub calibration_seed: u64,
}

impl<S: Scalar> Default for LipschitzOptions<S> {
    fn default() -> Self {
        LipschitzOptions {
            floor: VarianceFloor::Calibrated { batch: 256 },
            calibration_seed: 0xCA11B,
        }
    }
}

/// Observed LayerNorm/attention statistics from a calibration batch.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationStats<S> {
    pub min_ln_sigma: S,
    pub max_q_norm: S,
    pub max_k_norm: S,
}

/// Run a calibration batch of seeded random sequences through the model and
/// record extremal LayerNorm and query/key statistics.
pub fn calibrate<S: Scalar>(
    model: &TransformerModel<S>,
    batch: usize,
    seed: u64,
) -> Result<CalibrationStats<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ model.config.seed);
    let mut min_sigma = S::infinity();
    let mut max_q = S::zero();
    let mut max_k = S::zero();
    for _ in 0..batch.max(1) {
        let len = rng.gen_range(1..=model.config.n_max);
        let seq = Sequence::new(
            (0..len)
                .map(|_| rng.gen_range(0..model.config.vocab))
                .collect(),
        );
        let out = model.forward_detailed(&seq, &Default::default())?;
        min_sigma = min_sigma.min(out.min_ln_sigma);
        max_q = max_q.max(out.max_q_norm);
        max_k = max_k.max(out.max_k_norm);
    }
    Ok(CalibrationStats {
        min_ln_sigma: min_sigma,
        max_q_norm: max_q,
        max_k_norm: max_k,
    })
}

fn resolve_floor<S: Scalar>(model: &TransformerModel<S>, opts: &LipschitzOptions<S>) -> Result<S> {
    let floor = match opts.floor {
        VarianceFloor::Fixed(v) => {
            if !(v > S::zero()) {
                return Err(Error::Config("variance floor must be positive".into()));
            }
            v
        }
        VarianceFloor::Calibrated { batch } => {
            if model.config.layernorm {
                let stats = calibrate(model, batch, opts.calibration_seed)?;
                // Half the observed minimum σ covers both terms of the
                // normalization Jacobian.
                stats.min_ln_sigma * S::from_f64_lossy(0.5)
            } else {
                S::one()
            }
        }
    };
    Ok(floor.max(model.config.eps_ln))
}

/// Per-layer constants at context length `n` under a given variance floor.
pub fn layer_constants<S: Scalar>(
    model: &TransformerModel<S>,
    layer: usize,
    n: usize,
    eps_ln_eff: S,
) -> LayerConstants<S> {
    let w = &model.layers[layer];
    let w_q_norm = linalg::operator_norm(&w.w_q);
    let w_k_norm = linalg::operator_norm(&w.w_k);
    let w_v_norm = linalg::operator_norm(&w.w_v);
    let w_o_norm = linalg::operator_norm(&w.w_o);
    let act = S::from_f64_lossy(model.config.activation.lipschitz());
    let w_mlp_norm = linalg::operator_norm(&w.w_mlp_in) * act * linalg::operator_norm(&w.w_mlp_out);

    let d_model = S::from_usize(model.config.d_model).unwrap();
    let v_max = w_v_norm * w.gamma * d_model.sqrt();
    let sqrt_n = S::from_usize(n).unwrap().sqrt();
    let two_sqrt_dh = S::from_f64_lossy(2.0) * S::from_usize(model.config.d_head).unwrap().sqrt();
    // Value path plus the query-to-all-keys softmax path; the output
    // projection multiplies the whole attention block.
    let l_attn = w_o_norm * (w_v_norm + (sqrt_n / two_sqrt_dh) * w_q_norm * w_k_norm * v_max);

    let ln_factor = if model.config.layernorm {
        w.gamma / eps_ln_eff
    } else {
        S::one()
    };
    let attn_factor = S::one() + l_attn * ln_factor;
    let mlp_factor = S::one() + w_mlp_norm * ln_factor;

    LayerConstants {
        layer,
        w_q_norm,
        w_k_norm,
        w_v_norm,
        w_o_norm,
        w_mlp_norm,
        v_max,
        l_attn,
        attn_factor,
        mlp_factor,
        kappa: attn_factor * mlp_factor,
    }
}

/// End-to-end certificate at context length `n` with default calibration.
pub fn lambda<S: Scalar>(model: &TransformerModel<S>, n: usize) -> Result<LipschitzCertificate<S>> {
    lambda_with(model, n, &LipschitzOptions::default())
}

/// End-to-end certificate with explicit settings.
pub fn lambda_with<S: Scalar>(
    model: &TransformerModel<S>,
    n: usize,
    opts: &LipschitzOptions<S>,
) -> Result<LipschitzCertificate<S>> {
    if n == 0 {
        return Err(Error::Config("context length must be >= 1".into()));
    }
    let eps_ln_eff = resolve_floor(model, opts)?;
    let layers: Vec<LayerConstants<S>> = (0..model.config.layers)
        .map(|l| layer_constants(model, l, n, eps_ln_eff))
        .collect();
    let unembed_norm = linalg::operator_norm(&model.embedding);
    let lambda = layers.iter().fold(unembed_norm, |acc, l| acc * l.kappa);
    Ok(LipschitzCertificate {
        layers,
        unembed_norm,
        lambda,
        context_len: n,
        activation_lipschitz: S::from_f64_lossy(model.config.activation.lipschitz()),
        eps_ln_eff,
        vacuous: !lambda.is_finite(),
    })
}

/// Structured-task lower bound: any model forced to separate outputs by
/// `delta` from embedding perturbations of size `r` has constant ≥ delta/r.
pub fn lambda_lower_bound<S: Scalar>(delta: S, r: S) -> Result<S> {
    if !(delta > S::zero()) {
        return Err(Error::Config("output separation must be positive".into()));
    }
    if r < S::zero() {
        return Err(Error::Config("perturbation must be nonnegative".into()));
    }
    if r == S::zero() {
        return Ok(S::infinity());
    }
    Ok(delta / r)
}

/// Empirical effective-Lipschitz probe.
#[derive(Debug, Clone, Copy)]
pub struct EffectiveLipschitz<S> {
    /// Sup of ‖ΔF‖/‖ΔE‖ over the sampled one-position token flips.
    pub value: S,
    /// Certified constant the probe ran against.
    pub lambda: S,
    /// value / lambda.
    pub ratio: S,
}

/// Measure the empirical sup of output-change over embedding-change across
/// seeded one-position token flips with embedding distance ≤ `perturbation`.
pub fn effective_lipschitz<S: Scalar>(
    model: &TransformerModel<S>,
    cert: &LipschitzCertificate<S>,
    sample_count: usize,
    perturbation: S,
    seed: u64,
) -> Result<EffectiveLipschitz<S>> {
    if sample_count == 0 {
        return Err(Error::Config("sample_count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = model.config.vocab;
    let mut sup = S::zero();
    let mut used = 0usize;
    while used < sample_count {
        let len = rng.gen_range(1..=model.config.n_max);
        let mut tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
        let pos = rng.gen_range(0..len);
        let orig = tokens[pos];
        // Find an admissible flip within the perturbation budget.
        let mut alt = None;
        for _ in 0..32 {
            let cand = rng.gen_range(0..vocab);
            if cand == orig {
                continue;
            }
            let d = linalg::norm2(&linalg::sub(&model.embed(orig)?, &model.embed(cand)?));
            if d <= perturbation && d > S::zero() {
                alt = Some((cand, d));
                break;
            }
        }
        let Some((cand, dist)) = alt else {
            // No admissible flip for this draw; resample.
            used += 1;
            continue;
        };
        let f_a = model.forward(&Sequence::new(tokens.clone()))?;
        tokens[pos] = cand;
        let f_b = model.forward(&Sequence::new(tokens))?;
        let ratio = linalg::norm2(&linalg::sub(&f_a, &f_b)) / dist;
        sup = sup.max(ratio);
        used += 1;
    }
    Ok(EffectiveLipschitz {
        value: sup,
        lambda: cert.lambda,
        ratio: sup / cert.lambda,
    })
}
