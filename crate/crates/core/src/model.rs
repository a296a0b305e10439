//! A small deterministic pre-norm transformer used as the base model.
//!
//! Layout per layer: `x += W_O · Attn(LN(x))` followed by
//! `x += W_mlp_out · act(W_mlp_in · LN(x))`, single causal attention head,
//! no positional embeddings, tied unembedding (`logits = E · x_last`).
//! Forward passes are pure functions of `(weights, sequence)`; everything
//! downstream (certificates, Jacobians, audits) relies on that determinism.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::scalar::Scalar;
use crate::{Sequence, TokenId};

/// Activation used in the MLP block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
}

impl Activation {
    /// Lipschitz constant folded into the MLP stage norm.
    pub fn lipschitz(self) -> f64 {
        match self {
            // Max slope of GeLU: Φ(√2) + √2·φ(√2) ≈ 1.12896, rounded up.
            Activation::Gelu => 1.129,
            Activation::Relu => 1.0,
        }
    }

    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Gelu => {
                // tanh form of GeLU; max slope stays below the 1.083 bound.
                let c = S::from_f64_lossy(0.797_884_560_802_865_4); // sqrt(2/pi)
                let a = S::from_f64_lossy(0.044715);
                let half = S::from_f64_lossy(0.5);
                half * x * (S::one() + (c * (x + a * x * x * x)).tanh())
            }
            Activation::Relu => x.max(S::zero()),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Gelu => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Gelu),
            1 => Ok(Activation::Relu),
            other => Err(Error::Parse(format!("unknown activation tag {other}"))),
        }
    }
}

/// Model dimensions and construction settings.
#[derive(Debug, Clone)]
pub struct ModelConfig<S> {
    pub layers: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub vocab: u32,
    pub hidden: usize,
    pub eps_ln: S,
    pub seed: u64,
    pub activation: Activation,
    /// Max context length the Lipschitz certificate is computed for.
    pub n_max: usize,
    /// LayerNorm on/off. Disabling turns each sub-block into a plain linear
    /// residual update; used for linear probe models, not for certified runs.
    pub layernorm: bool,
    /// Target operator norm for each weight matrix at construction.
    pub weight_norm_target: S,
    /// When set, embedding rows come in pairs separated by roughly this
    /// distance so near-divergence token pairs exist in the vocabulary.
    pub embedding_pair_noise: Option<S>,
}

impl<S: Scalar> Default for ModelConfig<S> {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            d_model: 16,
            d_head: 8,
            vocab: 32,
            hidden: 32,
            eps_ln: S::from_f64_lossy(1e-5),
            seed: 7,
            activation: Activation::Gelu,
            n_max: 16,
            layernorm: true,
            weight_norm_target: S::one(),
            embedding_pair_noise: None,
        }
    }
}

/// Per-layer weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<S> {
    pub w_q: Mat<S>,
    pub w_k: Mat<S>,
    pub w_v: Mat<S>,
    pub w_o: Mat<S>,
    pub w_mlp_in: Mat<S>,
    pub w_mlp_out: Mat<S>,
    pub gamma: S,
}

/// The base model: embedding matrix plus layer stack.
#[derive(Debug, Clone)]
pub struct TransformerModel<S> {
    pub config: ModelConfig<S>,
    /// `vocab × d_model` embedding matrix, also the tied unembedding.
    pub embedding: Mat<S>,
    pub layers: Vec<LayerWeights<S>>,
}

/// Extra outputs a forward pass can record.
#[derive(Debug, Clone, Default)]
pub struct ForwardOptions<S> {
    /// Replace the initial embedding at this position with the given vector.
    pub embedding_override: Option<(usize, Vec<S>)>,
    /// Zero the attention entry `(layer, query_pos, key_pos)` before the
    /// weighted sum (no renormalization).
    pub zero_attention: Option<(usize, usize, usize)>,
    /// Record per-layer attention matrices and value-vector norms.
    pub record_attention: bool,
    /// Record hidden states after every layer.
    pub record_hidden: bool,
}

/// Forward pass result with optional instrumentation.
#[derive(Debug, Clone)]
pub struct ForwardOutput<S> {
    pub logits: Vec<S>,
    /// Multiply-add count of this pass.
    pub flops: u64,
    /// Smallest post-stabilizer standard deviation seen at any LayerNorm.
    pub min_ln_sigma: S,
    pub max_q_norm: S,
    pub max_k_norm: S,
    /// Per layer: `n × n` causal attention weights (row = query position).
    pub attention: Vec<Mat<S>>,
    /// Per layer: value-vector norms per position.
    pub value_norms: Vec<Vec<S>>,
    /// Hidden states after each layer: `[layer][position][dim]`.
    pub hidden: Vec<Vec<Vec<S>>>,
}

/// Hessian operator-norm estimate with convergence diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct HessianEstimate<S> {
    pub value: S,
    pub iterations: usize,
    pub converged: bool,
}

impl<S: Scalar> TransformerModel<S> {
    /// Build a seeded model: Gaussian init, each weight matrix rescaled to
    /// the configured operator-norm target, embedding rows unit-normalized.
    pub fn new(config: ModelConfig<S>) -> Result<Self> {
        if config.layers == 0 || config.d_model == 0 || config.d_head == 0 || config.hidden == 0 {
            return Err(Error::InvalidModel("zero dimension".into()));
        }
        if config.vocab < 1 {
            return Err(Error::InvalidModel("empty vocabulary".into()));
        }
        if config.eps_ln <= S::zero() {
            return Err(Error::InvalidModel("eps_ln must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;

        let gauss = |rng: &mut ChaCha8Rng| -> S {
            // Box–Muller keeps this generic over the scalar type.
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            S::from_f64_lossy((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos())
        };

        let mut embedding = Mat::from_fn(config.vocab as usize, d, |_, _| gauss(&mut rng));
        // Unit-normalize rows; then optionally rebuild odd rows as small
        // perturbations of their even partner.
        for i in 0..config.vocab as usize {
            let norm = linalg::norm2(embedding.row(i));
            for j in 0..d {
                embedding.set(i, j, embedding.get(i, j) / norm);
            }
        }
        if let Some(noise) = config.embedding_pair_noise {
            for i in (1..config.vocab as usize).step_by(2) {
                let base: Vec<S> = embedding.row(i - 1).to_vec();
                let mut dir: Vec<S> = (0..d).map(|_| gauss(&mut rng)).collect();
                linalg::normalize(&mut dir);
                for j in 0..d {
                    embedding.set(i, j, base[j] + noise * dir[j]);
                }
            }
        }

        let normed = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| -> Mat<S> {
            let mut m = Mat::from_fn(rows, cols, |_, _| gauss(rng));
            let op = linalg::operator_norm(&m);
            if op > S::zero() {
                m.scale(config.weight_norm_target / op);
            }
            m
        };

        let layers = (0..config.layers)
            .map(|_| LayerWeights {
                w_q: normed(&mut rng, d, d),
                w_k: normed(&mut rng, d, d),
                w_v: normed(&mut rng, d, d),
                w_o: normed(&mut rng, d, d),
                w_mlp_in: normed(&mut rng, config.hidden, d),
                w_mlp_out: normed(&mut rng, d, config.hidden),
                gamma: S::one(),
            })
            .collect();

        let model = TransformerModel {
            config,
            embedding,
            layers,
        };
        let violations = model.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidModel(violations.join("; ")));
        }
        Ok(model)
    }

    /// Structural invariant check; returns human-readable violations.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !self.embedding.is_finite() {
            v.push("embedding matrix has non-finite entries".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            for (name, m) in [
                ("W_Q", &l.w_q),
                ("W_K", &l.w_k),
                ("W_V", &l.w_v),
                ("W_O", &l.w_o),
                ("W_mlp_in", &l.w_mlp_in),
                ("W_mlp_out", &l.w_mlp_out),
            ] {
                if !m.is_finite() {
                    v.push(format!("layer {i}: {name} has non-finite entries"));
                }
            }
            if !(l.gamma > S::zero()) {
                v.push(format!("layer {i}: gamma must be positive"));
            }
        }
        if !(self.config.eps_ln > S::zero()) {
            v.push("eps_ln must be positive".into());
        }
        // Pairwise-distinct embedding rows; equality means C_E-based radii
        // cannot separate the two tokens.
        'outer: for a in 0..self.vocab() as usize {
            for b in a + 1..self.vocab() as usize {
                if self.embedding.row(a) == self.embedding.row(b) {
                    v.push(format!("embedding rows {a} and {b} are identical"));
                    break 'outer;
                }
            }
        }
        v
    }

    pub fn vocab(&self) -> u32 {
        self.config.vocab
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn check_sequence(&self, seq: &Sequence) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::Parse("empty sequence".into()));
        }
        if seq.len() > self.config.n_max {
            return Err(Error::Config(format!(
                "sequence length {} exceeds configured max context {}",
                seq.len(),
                self.config.n_max
            )));
        }
        for &t in seq.tokens() {
            if t >= self.config.vocab {
                return Err(Error::InvalidToken {
                    token: t,
                    vocab: self.config.vocab,
                });
            }
        }
        Ok(())
    }

    /// Embedding row for one token.
    pub fn embed(&self, token: TokenId) -> Result<Vec<S>> {
        if token >= self.config.vocab {
            return Err(Error::InvalidToken {
                token,
                vocab: self.config.vocab,
            });
        }
        Ok(self.embedding.row(token as usize).to_vec())
    }

    /// Max pairwise embedding distance (exact scan over all pairs).
    pub fn embedding_diameter(&self) -> Result<S> {
        self.pairwise_embedding_extremum(true)
    }

    /// Min pairwise embedding distance (exact scan over all pairs).
    pub fn min_embedding_separation(&self) -> Result<S> {
        self.pairwise_embedding_extremum(false)
    }

    fn pairwise_embedding_extremum(&self, max: bool) -> Result<S> {
        let v = self.config.vocab as usize;
        if v < 2 {
            return Err(Error::DegenerateVocabulary(self.config.vocab));
        }
        let mut best = if max { S::zero() } else { S::infinity() };
        for a in 0..v {
            for b in a + 1..v {
                let d = linalg::norm2(&linalg::sub(self.embedding.row(a), self.embedding.row(b)));
                best = if max { best.max(d) } else { best.min(d) };
            }
        }
        Ok(best)
    }

    /// Default finite-difference step: 1e-4 of the embedding diameter.
    pub fn default_fd_step(&self) -> Result<S> {
        Ok(S::from_f64_lossy(1e-4) * self.embedding_diameter()?)
    }

    /// Forward pass to next-token logits.
    pub fn forward(&self, seq: &Sequence) -> Result<Vec<S>> {
        Ok(self.forward_detailed(seq, &ForwardOptions::default())?.logits)
    }

    /// Forward pass returning `(logits, multiply-add count)`.
    pub fn forward_counted(&self, seq: &Sequence) -> Result<(Vec<S>, u64)> {
        let out = self.forward_detailed(seq, &ForwardOptions::default())?;
        Ok((out.logits, out.flops))
    }

    /// Forward pass with the embedding at `pos` replaced by `vector`.
    pub fn forward_with_embedding(&self, seq: &Sequence, pos: usize, vector: &[S]) -> Result<Vec<S>> {
        let opts = ForwardOptions {
            embedding_override: Some((pos, vector.to_vec())),
            ..ForwardOptions::default()
        };
        Ok(self.forward_detailed(seq, &opts)?.logits)
    }

    /// Instrumented forward pass.
    pub fn forward_detailed(&self, seq: &Sequence, opts: &ForwardOptions<S>) -> Result<ForwardOutput<S>> {
        self.check_sequence(seq)?;
        if let Some((pos, ref v)) = opts.embedding_override {
            if pos >= seq.len() || v.len() != self.config.d_model {
                return Err(Error::Config("bad embedding override".into()));
            }
        }
        let n = seq.len();
        let d = self.config.d_model;
        let mut flops: u64 = 0;

        let mut x: Vec<Vec<S>> = seq
            .tokens()
            .iter()
            .map(|&t| self.embedding.row(t as usize).to_vec())
            .collect();
        if let Some((pos, ref v)) = opts.embedding_override {
            x[pos] = v.clone();
        }

        let mut min_sigma = S::infinity();
        let mut max_q = S::zero();
        let mut max_k = S::zero();
        let mut attention = Vec::new();
        let mut value_norms = Vec::new();
        let mut hidden = Vec::new();

        let scale = S::one() / S::from_f64_lossy((self.config.d_head as f64).sqrt());

        for (li, layer) in self.layers.iter().enumerate() {
            // Attention sub-block.
            let ln: Vec<Vec<S>> = x
                .iter()
                .map(|xi| self.layer_norm(xi, layer.gamma, &mut min_sigma, &mut flops))
                .collect();
            let q: Vec<Vec<S>> = ln.iter().map(|v| layer.w_q.matvec(v)).collect();
            let k: Vec<Vec<S>> = ln.iter().map(|v| layer.w_k.matvec(v)).collect();
            let v: Vec<Vec<S>> = ln.iter().map(|v| layer.w_v.matvec(v)).collect();
            flops += 3 * (n as u64) * (d as u64) * (d as u64);

            for qi in &q {
                max_q = max_q.max(linalg::norm2(qi));
            }
            for ki in &k {
                max_k = max_k.max(linalg::norm2(ki));
            }

            let mut attn_mat = if opts.record_attention {
                Some(Mat::zeros(n, n))
            } else {
                None
            };

            for i in 0..n {
                // Causal logits over positions 0..=i.
                let mut logits: Vec<S> = (0..=i).map(|j| linalg::dot(&q[i], &k[j]) * scale).collect();
                flops += ((i + 1) * d) as u64;
                let m = logits.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
                let mut total = S::zero();
                for l in logits.iter_mut() {
                    *l = (*l - m).exp();
                    total = total + *l;
                }
                flops += (i + 1) as u64;
                let mut weights: Vec<S> = logits.iter().map(|&e| e / total).collect();
                if let Some((zl, zi, zj)) = opts.zero_attention {
                    if zl == li && zi == i && zj <= i {
                        weights[zj] = S::zero();
                    }
                }
                if let Some(am) = attn_mat.as_mut() {
                    for (j, &w) in weights.iter().enumerate() {
                        am.set(i, j, w);
                    }
                }
                let mut ctx = vec![S::zero(); d];
                for (j, &w) in weights.iter().enumerate() {
                    linalg::axpy(&mut ctx, w, &v[j]);
                }
                flops += ((i + 1) * d) as u64;
                let proj = layer.w_o.matvec(&ctx);
                flops += (d * d) as u64;
                for (xi, pi) in x[i].iter_mut().zip(proj) {
                    *xi = *xi + pi;
                }
            }

            if opts.record_attention {
                attention.push(attn_mat.unwrap());
                value_norms.push(v.iter().map(|vj| linalg::norm2(vj)).collect());
            }

            // MLP sub-block.
            for xi in x.iter_mut() {
                let ln2 = self.layer_norm(xi, layer.gamma, &mut min_sigma, &mut flops);
                let mut h = layer.w_mlp_in.matvec(&ln2);
                flops += (self.config.hidden * d) as u64;
                for hv in h.iter_mut() {
                    *hv = self.config.activation.apply(*hv);
                }
                flops += self.config.hidden as u64;
                let out = layer.w_mlp_out.matvec(&h);
                flops += (self.config.hidden * d) as u64;
                for (a, b) in xi.iter_mut().zip(out) {
                    *a = *a + b;
                }
            }

            if opts.record_hidden {
                hidden.push(x.clone());
            }
        }

        // Tied unembedding on the last position.
        let logits = self.embedding.matvec(&x[n - 1]);
        flops += (self.config.vocab as u64) * (d as u64);

        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite logits".into()));
        }

        Ok(ForwardOutput {
            logits,
            flops,
            min_ln_sigma: min_sigma,
            max_q_norm: max_q,
            max_k_norm: max_k,
            attention,
            value_norms,
            hidden,
        })
    }

    /// Model-defined prefix probability: the product of next-token softmax
    /// masses along the prefix, with the unconditioned first token taken
    /// uniform over the vocabulary. This is the alternative to empirical
    /// trie counts when a weight-derived distribution is wanted.
    pub fn prefix_prob(&self, prefix: &Sequence) -> Result<f64> {
        self.check_sequence(prefix)?;
        let mut p = 1.0f64 / self.config.vocab as f64;
        for i in 1..prefix.len() {
            let ctx = Sequence::new(prefix.tokens()[..i].to_vec());
            let logits = self.forward(&ctx)?;
            let max = logits
                .iter()
                .fold(S::neg_infinity(), |a, &b| a.max(b))
                .to_f64_lossy();
            let mut total = 0.0f64;
            let mut target = 0.0f64;
            for (t, &l) in logits.iter().enumerate() {
                let e = (l.to_f64_lossy() - max).exp();
                total += e;
                if t == prefix.tokens()[i] as usize {
                    target = e;
                }
            }
            p *= target / total;
        }
        Ok(p)
    }

    /// Multiply-add count of a forward pass at sequence length `n`; a pure
    /// function of the dimensions, mirroring the instrumented counter.
    pub fn forward_flops(&self, n: usize) -> u64 {
        let n = n as u64;
        let d = self.config.d_model as u64;
        let hidden = self.config.hidden as u64;
        let ln = if self.config.layernorm { 3 * d } else { 0 };
        let tri = n * (n + 1) / 2;
        let per_layer = n * ln                      // attention-side norm
            + 3 * n * d * d                         // q, k, v projections
            + tri * d + tri + tri * d + n * d * d   // logits, softmax, mix, output
            + n * (ln + hidden * d + hidden + hidden * d); // mlp
        self.config.layers as u64 * per_layer + self.config.vocab as u64 * d
    }

    fn layer_norm(&self, x: &[S], gamma: S, min_sigma: &mut S, flops: &mut u64) -> Vec<S> {
        if !self.config.layernorm {
            return x.to_vec();
        }
        let d = S::from_usize(x.len()).unwrap();
        let mean = x.iter().fold(S::zero(), |a, &b| a + b) / d;
        let var = x
            .iter()
            .fold(S::zero(), |a, &b| a + (b - mean) * (b - mean))
            / d;
        let sigma = (var + self.config.eps_ln).sqrt();
        *min_sigma = (*min_sigma).min(sigma);
        *flops += 3 * x.len() as u64;
        x.iter().map(|&v| gamma * (v - mean) / sigma).collect()
    }

    /// Central-difference Jacobian of the logits w.r.t. the embedding
    /// injected at `divergence_pos`; `|V| × d_model`.
    pub fn jacobian_at(&self, signpost: &Sequence, divergence_pos: usize, step: S) -> Result<Mat<S>> {
        self.fd_jacobian(signpost, divergence_pos, step, true)
    }

    /// Forward-difference Jacobian, used as a cross-check oracle.
    pub fn jacobian_at_forward(
        &self,
        signpost: &Sequence,
        divergence_pos: usize,
        step: S,
    ) -> Result<Mat<S>> {
        self.fd_jacobian(signpost, divergence_pos, step, false)
    }

    fn fd_jacobian(&self, signpost: &Sequence, pos: usize, h: S, central: bool) -> Result<Mat<S>> {
        if !(h > S::zero()) {
            return Err(Error::Config("finite-difference step must be positive".into()));
        }
        self.check_sequence(signpost)?;
        if pos >= signpost.len() {
            return Err(Error::Config(format!(
                "divergence position {pos} out of range for length {}",
                signpost.len()
            )));
        }
        let d = self.config.d_model;
        let base_embedding = self.embed(signpost.tokens()[pos])?;
        let f0 = if central {
            Vec::new()
        } else {
            self.forward_with_embedding(signpost, pos, &base_embedding)?
        };

        let mut jac = Mat::zeros(self.config.vocab as usize, d);
        for col in 0..d {
            let mut plus = base_embedding.clone();
            plus[col] = plus[col] + h;
            let fp = self.forward_with_embedding(signpost, pos, &plus)?;
            let column: Vec<S> = if central {
                let mut minus = base_embedding.clone();
                minus[col] = minus[col] - h;
                let fm = self.forward_with_embedding(signpost, pos, &minus)?;
                fp.iter()
                    .zip(&fm)
                    .map(|(&p, &m)| (p - m) / (S::from_f64_lossy(2.0) * h))
                    .collect()
            } else {
                fp.iter().zip(&f0).map(|(&p, &b)| (p - b) / h).collect()
            };
            for (row, v) in column.into_iter().enumerate() {
                jac.set(row, col, v);
            }
        }
        if !jac.is_finite() {
            return Err(Error::InvalidModel("non-finite Jacobian".into()));
        }
        Ok(jac)
    }

    /// Hessian operator norm of the logits w.r.t. the embedding at
    /// `divergence_pos`, estimated from the finite-difference second
    /// derivative tensor.
    pub fn hessian_norm_estimate(
        &self,
        signpost: &Sequence,
        divergence_pos: usize,
        step: S,
    ) -> Result<HessianEstimate<S>> {
        if !(step > S::zero()) {
            return Err(Error::Config("finite-difference step must be positive".into()));
        }
        self.check_sequence(signpost)?;
        if divergence_pos >= signpost.len() {
            return Err(Error::Config("divergence position out of range".into()));
        }
        let x0 = self.embed(signpost.tokens()[divergence_pos])?;
        let seq = signpost.clone();
        Ok(hessian_operator_norm(
            |e: &[S]| {
                self.forward_with_embedding(&seq, divergence_pos, e)
                    .expect("probe forward")
            },
            &x0,
            step,
            HessianProbeSettings::default(),
        ))
    }
}

/// Settings for the Hessian operator-norm probe.
#[derive(Debug, Clone, Copy)]
pub struct HessianProbeSettings {
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for HessianProbeSettings {
    fn default() -> Self {
        HessianProbeSettings {
            restarts: 4,
            max_iters: 40,
            tol: 1e-6,
            seed: 0x5EED,
        }
    }
}

/// Estimate `sup_{‖u‖=1} ‖D²f[u,u]‖` for a vector-valued `f`.
///
/// Builds the full second-difference tensor once (central differences over
/// coordinate pairs), then runs alternating maximization: fix `u`, take the
/// output direction `w` aligned with `D²f[u,u]`; fix `w`, replace `u` with
/// the top eigenvector of the contracted symmetric matrix. Random restarts
/// guard against bad local maxima.
pub fn hessian_operator_norm<S: Scalar>(
    f: impl Fn(&[S]) -> Vec<S>,
    x0: &[S],
    h: S,
    settings: HessianProbeSettings,
) -> HessianEstimate<S> {
    let d = x0.len();
    let f0 = f(x0);
    let out_dim = f0.len();

    let eval_shift = |a: usize, sa: S, b: usize, sb: S| -> Vec<S> {
        let mut x = x0.to_vec();
        x[a] = x[a] + sa * h;
        x[b] = x[b] + sb * h;
        f(&x)
    };

    // tensor[out][a][b], symmetric in (a, b)
    let mut tensor = vec![Mat::zeros(d, d); out_dim];
    for a in 0..d {
        let fp = eval_shift(a, S::one(), a, S::zero());
        let fm = eval_shift(a, -S::one(), a, S::zero());
        for o in 0..out_dim {
            let v = (fp[o] - S::from_f64_lossy(2.0) * f0[o] + fm[o]) / (h * h);
            tensor[o].set(a, a, v);
        }
        for b in a + 1..d {
            let fpp = eval_shift(a, S::one(), b, S::one());
            let fpm = eval_shift(a, S::one(), b, -S::one());
            let fmp = eval_shift(a, -S::one(), b, S::one());
            let fmm = eval_shift(a, -S::one(), b, -S::one());
            let four_h2 = S::from_f64_lossy(4.0) * h * h;
            for o in 0..out_dim {
                let v = (fpp[o] - fpm[o] - fmp[o] + fmm[o]) / four_h2;
                tensor[o].set(a, b, v);
                tensor[o].set(b, a, v);
            }
        }
    }

    let quad = |u: &[S]| -> Vec<S> {
        tensor
            .iter()
            .map(|t| linalg::dot(u, &t.matvec(u)))
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let tol = S::from_f64_lossy(settings.tol);
    let mut best = S::zero();
    let mut total_iters = 0;
    let mut converged = false;

    for _ in 0..settings.restarts {
        let mut u: Vec<S> = (0..d)
            .map(|_| S::from_f64_lossy(rng.gen_range(-1.0..1.0)))
            .collect();
        linalg::normalize(&mut u);
        let mut value = S::zero();
        let mut this_converged = false;
        for _ in 0..settings.max_iters {
            total_iters += 1;
            let z = quad(&u);
            let zn = linalg::norm2(&z);
            if zn == S::zero() {
                value = S::zero();
                this_converged = true;
                break;
            }
            let w: Vec<S> = z.iter().map(|&v| v / zn).collect();
            // Contract the tensor against the output direction.
            let mut m: Mat<S> = Mat::zeros(d, d);
            for (o, t) in tensor.iter().enumerate() {
                let wo = w[o];
                for idx in 0..d * d {
                    m.data_mut()[idx] = m.data()[idx] + wo * t.data()[idx];
                }
            }
            let (eigs, vecs) = linalg::jacobi_eigen(&m, 30);
            let (top_idx, _) = eigs
                .iter()
                .enumerate()
                .fold((0, S::zero()), |acc, (i, &e)| {
                    if e.abs() > acc.1 {
                        (i, e.abs())
                    } else {
                        acc
                    }
                });
            let mut new_u: Vec<S> = (0..d).map(|r| vecs.get(r, top_idx)).collect();
            linalg::normalize(&mut new_u);
            u = new_u;
            if (zn - value).abs() <= tol * zn.max(S::one()) {
                value = zn;
                this_converged = true;
                break;
            }
            value = zn;
        }
        // One final evaluation at the converged direction.
        let z = quad(&u);
        let final_value = linalg::norm2(&z);
        best = best.max(final_value.max(value));
        converged = converged || this_converged;
    }

    HessianEstimate {
        value: best,
        iterations: total_iters,
        converged,
    }
}

// ---------------------------------------------------------------------------
// Flat binary weight file
// ---------------------------------------------------------------------------

const WEIGHTS_MAGIC: &[u8; 8] = b"LAWSWTS1";
const WEIGHTS_VERSION: u32 = 1;

impl<S: Scalar> TransformerModel<S> {
    /// Serialize to the flat binary format: header (magic, version, dims,
    /// eps_ln, seed, hidden, activation, layernorm flag) followed by
    /// row-major 64-bit float matrices in declared order. Byte-identical
    /// across round trips.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.config.layers as u32).to_le_bytes());
        buf.extend_from_slice(&(self.config.d_model as u32).to_le_bytes());
        buf.extend_from_slice(&(self.config.d_head as u32).to_le_bytes());
        buf.extend_from_slice(&self.config.vocab.to_le_bytes());
        buf.extend_from_slice(&self.config.eps_ln.to_f64_lossy().to_le_bytes());
        buf.extend_from_slice(&self.config.seed.to_le_bytes());
        buf.extend_from_slice(&(self.config.hidden as u32).to_le_bytes());
        buf.extend_from_slice(&(self.config.n_max as u32).to_le_bytes());
        buf.push(self.config.activation.tag());
        buf.push(self.config.layernorm as u8);

        let write_mat = |buf: &mut Vec<u8>, m: &Mat<S>| {
            for &v in m.data() {
                buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        };
        write_mat(&mut buf, &self.embedding);
        for l in &self.layers {
            write_mat(&mut buf, &l.w_q);
            write_mat(&mut buf, &l.w_k);
            write_mat(&mut buf, &l.w_v);
            write_mat(&mut buf, &l.w_o);
            write_mat(&mut buf, &l.w_mlp_in);
            write_mat(&mut buf, &l.w_mlp_out);
            buf.extend_from_slice(&l.gamma.to_f64_lossy().to_le_bytes());
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };

        let magic = cur.take(8)?;
        if magic != WEIGHTS_MAGIC {
            return Err(Error::Parse("bad weights magic".into()));
        }
        let version = cur.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::Parse(format!("unsupported weights version {version}")));
        }
        let layers = cur.u32()? as usize;
        let d_model = cur.u32()? as usize;
        let d_head = cur.u32()? as usize;
        let vocab = cur.u32()?;
        let eps_ln = S::from_f64_lossy(cur.f64()?);
        let seed = cur.u64()?;
        let hidden = cur.u32()? as usize;
        let n_max = cur.u32()? as usize;
        let activation = Activation::from_tag(cur.u8()?)?;
        let layernorm = cur.u8()? != 0;

        let read_mat = |cur: &mut Cursor, rows: usize, cols: usize| -> Result<Mat<S>> {
            let mut m = Mat::zeros(rows, cols);
            for i in 0..rows * cols {
                m.data_mut()[i] = S::from_f64_lossy(cur.f64()?);
            }
            Ok(m)
        };

        let embedding = read_mat(&mut cur, vocab as usize, d_model)?;
        let mut layer_weights = Vec::with_capacity(layers);
        for _ in 0..layers {
            layer_weights.push(LayerWeights {
                w_q: read_mat(&mut cur, d_model, d_model)?,
                w_k: read_mat(&mut cur, d_model, d_model)?,
                w_v: read_mat(&mut cur, d_model, d_model)?,
                w_o: read_mat(&mut cur, d_model, d_model)?,
                w_mlp_in: read_mat(&mut cur, hidden, d_model)?,
                w_mlp_out: read_mat(&mut cur, d_model, hidden)?,
                gamma: S::from_f64_lossy(cur.f64()?),
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Parse("trailing bytes in weights file".into()));
        }

        let model = TransformerModel {
            config: ModelConfig {
                layers,
                d_model,
                d_head,
                vocab,
                hidden,
                eps_ln,
                seed,
                activation,
                n_max,
                layernorm,
                weight_norm_target: S::one(),
                embedding_pair_noise: None,
            },
            embedding,
            layers: layer_weights,
        };
        let violations = model.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidModel(violations.join("; ")));
        }
        Ok(model)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse("truncated weights file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
