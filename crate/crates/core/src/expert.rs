//! Parametrized experts: cheap certified stand-ins for the base model near a
//! signpost sequence.
//!
//! An expert is a tuple of signpost, parameter extractor, function payload,
//! routing radius, and measured fitting error. Payloads form a cost
//! hierarchy: stored constant (level 1), Jacobian-corrected linear map
//! (level 2), exact primitives — lookup table, affine rule, token template —
//! (level 3), and a small MLP (level 4).
//!
//! The canonical binary record is the unit of all bit accounting: update
//! deltas, description lengths, and round-trip identity tests all run over
//! these bytes.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::TransformerModel;
use crate::trie::{ExpertId, NodeId};
use crate::{Sequence, TokenId};

/// Position-indexed parameter extraction.
#[derive(Debug, Clone, PartialEq)]
pub enum Extractor {
    /// Embedding delta at the divergence position against the signpost.
    DivergenceEmbedding,
    /// Concatenated embeddings at fixed positions.
    PositionEmbeddings(Vec<u32>),
    /// Raw token ids at fixed positions.
    PositionTokens(Vec<u32>),
}

impl Extractor {
    /// Dimension of the extracted parameter vector.
    pub fn arity(&self, d_model: usize) -> usize {
        match self {
            Extractor::DivergenceEmbedding => d_model,
            Extractor::PositionEmbeddings(p) => p.len() * d_model,
            Extractor::PositionTokens(p) => p.len(),
        }
    }

    pub fn positions(&self) -> &[u32] {
        match self {
            Extractor::DivergenceEmbedding => &[],
            Extractor::PositionEmbeddings(p) | Extractor::PositionTokens(p) => p,
        }
    }

    fn mode_tag(&self) -> u8 {
        match self {
            Extractor::DivergenceEmbedding => 0,
            Extractor::PositionEmbeddings(_) => 1,
            Extractor::PositionTokens(_) => 2,
        }
    }

    /// Token ids at the extractor's positions.
    pub fn extract_tokens(&self, x: &Sequence) -> Result<Vec<TokenId>> {
        self.positions()
            .iter()
            .map(|&p| {
                x.tokens().get(p as usize).copied().ok_or_else(|| {
                    Error::Extraction(format!("position {p} beyond input length {}", x.len()))
                })
            })
            .collect()
    }

    /// Embedding-space coordinates of the extracted parameters.
    pub fn extract_embedded<S: crate::Scalar>(
        &self,
        x: &Sequence,
        model: &TransformerModel<S>,
    ) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for t in self.extract_tokens(x)? {
            let e = model.embed(t)?;
            out.extend(e.iter().map(|v| v.to_f64_lossy()));
        }
        Ok(out)
    }
}

/// Feed-forward payload for level-4 experts: ReLU between affine layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// (weights, bias) per layer, applied in order.
    pub layers: Vec<(Mat<f64>, Vec<f64>)>,
}

impl Mlp {
    pub fn forward(&self, input: &[f64]) -> (Vec<f64>, u64) {
        let mut x = input.to_vec();
        let mut flops = 0u64;
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let mut y = w.matvec(&x);
            flops += (w.rows() * w.cols()) as u64;
            for (yi, bi) in y.iter_mut().zip(b) {
                *yi += bi;
            }
            if i != last {
                for v in y.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            x = y;
        }
        (x, flops)
    }

    /// Product of layer operator norms (ReLU is 1-Lipschitz).
    pub fn lipschitz(&self) -> f64 {
        self.layers
            .iter()
            .map(|(w, _)| linalg::operator_norm(w))
            .product()
    }
}

/// Expert function payload, by level.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Level 1: stored output vector.
    Constant { output: Vec<f64> },
    /// Level 2: base output plus Jacobian times the divergence delta.
    Linear { base: Vec<f64>, jacobian: Mat<f64> },
    /// Level 3: exact key → output table over extracted slot tokens.
    Lookup { entries: Vec<(Vec<TokenId>, Vec<f64>)> },
    /// Level 3: affine rule over extracted slot token ids.
    Affine { weights: Mat<f64>, bias: Vec<f64> },
    /// Level 3: stored vector with a slot-dependent one-hot correction.
    Template { base: Vec<f64>, scale: f64, slot: usize },
    /// Level 4: small MLP over extracted embeddings.
    SmallMlp(Mlp),
}

impl Payload {
    pub fn level(&self) -> u8 {
        match self {
            Payload::Constant { .. } => 1,
            Payload::Linear { .. } => 2,
            Payload::Lookup { .. } | Payload::Affine { .. } | Payload::Template { .. } => 3,
            Payload::SmallMlp(_) => 4,
        }
    }

    fn kind_tag(&self) -> u8 {
        match self {
            Payload::Constant { .. } => 0,
            Payload::Linear { .. } => 1,
            Payload::Lookup { .. } => 2,
            Payload::Affine { .. } => 3,
            Payload::Template { .. } => 4,
            Payload::SmallMlp(_) => 5,
        }
    }
}

/// A parametrized expert anchored at a trie node.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub id: ExpertId,
    pub signpost: Sequence,
    /// Trie node the signpost is anchored at (not serialized).
    pub node: NodeId,
    pub extractor: Extractor,
    pub payload: Payload,
    /// Routing radius in bits; ≤ 0 never routes, +∞ always matches any
    /// shared-prefix query.
    pub tau: f64,
    /// Measured ‖F_W(n*) − f(φ(n*))‖ at creation.
    pub fit_error: f64,
    pub certified: bool,
    /// Declared Lipschitz constant of the payload.
    pub payload_lipschitz: f64,
    pub created_at_query: u64,
    pub created_at_day: u32,
}

impl Expert {
    pub fn level(&self) -> u8 {
        self.payload.level()
    }
}

/// Routing radius from the quality threshold, fitting error, certificate
/// constant, and embedding diameter. Negative values mean the expert can
/// never be certified to route.
pub fn routing_radius(delta: f64, fit_error: f64, lambda: f64, c_e: f64) -> Result<f64> {
    let denom = lambda * c_e;
    if !(denom > 0.0) {
        return Err(Error::DegenerateModel(format!(
            "lambda*C_E = {denom}; routing radii undefined"
        )));
    }
    Ok((delta - fit_error - 2.0 * denom) / denom)
}

/// Certification outcome.
#[derive(Debug, Clone, Copy)]
pub struct Certification {
    pub certified: bool,
    /// δ − (ε_fit + 2ΛC_E).
    pub margin: f64,
}

/// The uniform error bound holds for every input when
/// `fit_error + 2ΛC_E ≤ δ` and the payload is no steeper than the model.
pub fn certify(expert: &Expert, delta: f64, lambda: f64, c_e: f64) -> Certification {
    let margin = delta - (expert.fit_error + 2.0 * lambda * c_e);
    Certification {
        certified: margin >= 0.0 && expert.payload_lipschitz <= lambda,
        margin,
    }
}

/// Evaluate the expert on an input; returns the output and its multiply-add
/// count. Extraction failures (positions beyond the input, unseen lookup
/// keys, missing divergence token) surface as [`Error::Extraction`].
pub fn evaluate<S: crate::Scalar>(
    expert: &Expert,
    x: &Sequence,
    model: &TransformerModel<S>,
) -> Result<(Vec<f64>, u64)> {
    match &expert.payload {
        Payload::Constant { output } => Ok((output.clone(), 0)),
        Payload::Linear { base, jacobian } => {
            let phi = divergence_delta(expert, x, model)?;
            let mut out = base.clone();
            for (i, o) in out.iter_mut().enumerate() {
                *o += linalg::dot(jacobian.row(i), &phi);
            }
            Ok((out, (jacobian.rows() * jacobian.cols()) as u64))
        }
        Payload::Lookup { entries } => {
            let key = expert.extractor.extract_tokens(x)?;
            entries
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, out)| (out.clone(), key.len() as u64))
                .ok_or_else(|| Error::Extraction(format!("lookup key {key:?} not in table")))
        }
        Payload::Affine { weights, bias } => {
            let key = expert.extractor.extract_tokens(x)?;
            let phi: Vec<f64> = key.iter().map(|&t| t as f64).collect();
            let mut out = weights.matvec(&phi);
            for (o, b) in out.iter_mut().zip(bias) {
                *o += b;
            }
            Ok((out, (weights.rows() * weights.cols()) as u64))
        }
        Payload::Template { base, scale, slot } => {
            let key = expert.extractor.extract_tokens(x)?;
            let &tok = key.get(*slot).ok_or_else(|| {
                Error::Extraction(format!("template slot {slot} beyond extracted key"))
            })?;
            let mut out = base.clone();
            let idx = tok as usize;
            if idx >= out.len() {
                return Err(Error::Extraction(format!("slot token {tok} beyond output dim")));
            }
            out[idx] += scale;
            Ok((out, 1))
        }
        Payload::SmallMlp(mlp) => {
            let phi = expert.extractor.extract_embedded(x, model)?;
            let (out, flops) = mlp.forward(&phi);
            Ok((out, flops))
        }
    }
}

/// Divergence-embedding delta `E(x_div) − E(n*_div)`; zero when `x` equals
/// the signpost, extraction error when one is a proper prefix of the other.
fn divergence_delta<S: crate::Scalar>(
    expert: &Expert,
    x: &Sequence,
    model: &TransformerModel<S>,
) -> Result<Vec<f64>> {
    let n_star = &expert.signpost;
    let shared = x.common_prefix_len(n_star);
    if shared == x.len() && shared == n_star.len() {
        return Ok(vec![0.0; model.d_model()]);
    }
    if shared == x.len() || shared == n_star.len() {
        return Err(Error::Extraction(
            "no divergence token: one sequence is a prefix of the other".into(),
        ));
    }
    let ex = model.embed(x.tokens()[shared])?;
    let en = model.embed(n_star.tokens()[shared])?;
    Ok(ex
        .iter()
        .zip(&en)
        .map(|(a, b)| a.to_f64_lossy() - b.to_f64_lossy())
        .collect())
}

/// Triangle decomposition of the approximation error at one input.
#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub total: f64,
    /// ‖F(x) − F(n*)‖
    pub base_shift: f64,
    /// ‖F(n*) − f(φ(n*))‖
    pub fit: f64,
    /// ‖f(φ(n*)) − f(φ(x))‖
    pub payload_shift: f64,
}

/// Measure the three error terms at `x` against the base model.
pub fn decomposition_terms(
    expert: &Expert,
    x: &Sequence,
    model: &TransformerModel<f64>,
) -> Result<Triangle> {
    let f_x = model.forward(x)?;
    let f_star = model.forward(&expert.signpost)?;
    let (at_star, _) = evaluate(expert, &expert.signpost, model)?;
    let (at_x, _) = evaluate(expert, x, model)?;
    Ok(Triangle {
        total: linalg::norm2(&linalg::sub(&f_x, &at_x)),
        base_shift: linalg::norm2(&linalg::sub(&f_x, &f_star)),
        fit: linalg::norm2(&linalg::sub(&f_star, &at_star)),
        payload_shift: linalg::norm2(&linalg::sub(&at_star, &at_x)),
    })
}

/// Re-measure fit and radius against another model sharing the vocabulary.
#[derive(Debug, Clone, Copy)]
pub struct Recertification {
    pub fit_error: f64,
    pub tau: f64,
    pub certified: bool,
    /// Max observed error over the sampled validation inputs.
    pub sampled_max_error: f64,
    pub samples_checked: usize,
}

pub fn recertify_for_model(
    expert: &Expert,
    other: &TransformerModel<f64>,
    other_lambda: f64,
    other_c_e: f64,
    delta: f64,
    sample_count: usize,
    seed: u64,
) -> Result<Recertification> {
    use rand::{Rng, SeedableRng};
    if other.vocab() <= *expert.signpost.tokens().iter().max().unwrap() {
        return Err(Error::Portability(format!(
            "signpost token beyond target vocabulary {}",
            other.vocab()
        )));
    }
    let star_err = {
        let f2 = other.forward(&expert.signpost)?;
        let (mine, _) = evaluate(expert, &expert.signpost, other)?;
        linalg::norm2(&linalg::sub(&f2, &mine))
    };
    let tau = routing_radius(delta, star_err, other_lambda, other_c_e)?;
    let cert = {
        let margin = delta - (star_err + 2.0 * other_lambda * other_c_e);
        margin >= 0.0 && expert.payload_lipschitz <= other_lambda
    };

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..sample_count {
        let mut tokens = expert.signpost.tokens().to_vec();
        let pos = rng.gen_range(0..tokens.len());
        tokens[pos] = rng.gen_range(0..other.vocab());
        let x = Sequence::new(tokens);
        let Ok((out, _)) = evaluate(expert, &x, other) else {
            continue;
        };
        let f2 = other.forward(&x)?;
        max_err = max_err.max(linalg::norm2(&linalg::sub(&f2, &out)));
        checked += 1;
    }
    Ok(Recertification {
        fit_error: star_err,
        tau,
        certified: cert,
        sampled_max_error: max_err,
        samples_checked: checked,
    })
}

// ---------------------------------------------------------------------------
// Canonical serialization and description length
// ---------------------------------------------------------------------------

/// Exact bit length of the canonical record.
pub fn description_length(expert: &Expert) -> u64 {
    8 * serialize(expert).len() as u64
}

/// Information lower bound `k · d_out · log2(τ*/ε)` in bits, defined when
/// `τ* > ε > 0`.
pub fn expert_bits_lower_bound(k: usize, d_out: usize, tau: f64, eps: f64) -> Option<f64> {
    if eps > 0.0 && tau > eps {
        Some(k as f64 * d_out as f64 * (tau / eps).log2())
    } else {
        None
    }
}

fn push_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_mat(buf: &mut Vec<u8>, m: &Mat<f64>) {
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    push_f64s(buf, m.data());
}

/// Canonical record: header (id, level, kind, extractor, dims, signpost),
/// payload as 64-bit floats, then radius, fit error, and creation metadata.
pub fn serialize(expert: &Expert) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&expert.id.to_le_bytes());
    buf.push(expert.level());
    buf.push(expert.payload.kind_tag());
    buf.push(expert.extractor.mode_tag());
    let (vocab, d_model) = payload_dims(expert);
    buf.extend_from_slice(&vocab.to_le_bytes());
    buf.extend_from_slice(&d_model.to_le_bytes());
    buf.extend_from_slice(&(expert.extractor.arity(d_model as usize) as u32).to_le_bytes());
    buf.extend_from_slice(&(expert.signpost.len() as u32).to_le_bytes());
    for &t in expert.signpost.tokens() {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    let positions = expert.extractor.positions();
    buf.extend_from_slice(&(positions.len() as u32).to_le_bytes());
    for &p in positions {
        buf.extend_from_slice(&p.to_le_bytes());
    }

    match &expert.payload {
        Payload::Constant { output } => {
            buf.extend_from_slice(&(output.len() as u32).to_le_bytes());
            push_f64s(&mut buf, output);
        }
        Payload::Linear { base, jacobian } => {
            buf.extend_from_slice(&(base.len() as u32).to_le_bytes());
            push_f64s(&mut buf, base);
            push_mat(&mut buf, jacobian);
        }
        Payload::Lookup { entries } => {
            buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
            let key_width = entries.first().map_or(0, |(k, _)| k.len()) as u32;
            buf.extend_from_slice(&key_width.to_le_bytes());
            let out_width = entries.first().map_or(0, |(_, o)| o.len()) as u32;
            buf.extend_from_slice(&out_width.to_le_bytes());
            for (k, out) in entries {
                for &t in k {
                    buf.extend_from_slice(&t.to_le_bytes());
                }
                push_f64s(&mut buf, out);
            }
        }
        Payload::Affine { weights, bias } => {
            push_mat(&mut buf, weights);
            buf.extend_from_slice(&(bias.len() as u32).to_le_bytes());
            push_f64s(&mut buf, bias);
        }
        Payload::Template { base, scale, slot } => {
            buf.extend_from_slice(&(base.len() as u32).to_le_bytes());
            push_f64s(&mut buf, base);
            buf.extend_from_slice(&scale.to_le_bytes());
            buf.extend_from_slice(&(*slot as u32).to_le_bytes());
        }
        Payload::SmallMlp(mlp) => {
            buf.extend_from_slice(&(mlp.layers.len() as u32).to_le_bytes());
            for (w, b) in &mlp.layers {
                push_mat(&mut buf, w);
                buf.extend_from_slice(&(b.len() as u32).to_le_bytes());
                push_f64s(&mut buf, b);
            }
        }
    }

    buf.extend_from_slice(&expert.tau.to_le_bytes());
    buf.extend_from_slice(&expert.fit_error.to_le_bytes());
    buf.push(expert.certified as u8);
    buf.extend_from_slice(&expert.payload_lipschitz.to_le_bytes());
    buf.extend_from_slice(&expert.created_at_query.to_le_bytes());
    buf.extend_from_slice(&expert.created_at_day.to_le_bytes());
    buf
}

fn payload_dims(expert: &Expert) -> (u32, u32) {
    let vocab = match &expert.payload {
        Payload::Constant { output } => output.len(),
        Payload::Linear { base, .. } => base.len(),
        Payload::Lookup { entries } => entries.first().map_or(0, |(_, o)| o.len()),
        Payload::Affine { bias, .. } => bias.len(),
        Payload::Template { base, .. } => base.len(),
        Payload::SmallMlp(mlp) => mlp.layers.last().map_or(0, |(w, _)| w.rows()),
    };
    let d_model = match &expert.payload {
        Payload::Linear { jacobian, .. } => jacobian.cols(),
        Payload::SmallMlp(mlp) => mlp.layers.first().map_or(0, |(w, _)| w.cols()),
        _ => 0,
    };
    (vocab as u32, d_model as u32)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse("truncated expert record".into()));
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
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn mat(&mut self) -> Result<Mat<f64>> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let data = self.f64s(rows * cols)?;
        let mut m = Mat::zeros(rows, cols);
        m.data_mut().copy_from_slice(&data);
        Ok(m)
    }
}

/// Parse one canonical record; returns the expert and the bytes consumed.
/// The trie node handle is not part of the record and comes back as 0.
pub fn deserialize(bytes: &[u8]) -> Result<(Expert, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    let id = r.u32()?;
    let _level = r.u8()?;
    let kind = r.u8()?;
    let mode = r.u8()?;
    let _vocab = r.u32()?;
    let _d_model = r.u32()?;
    let _k = r.u32()?;
    let signpost_len = r.u32()? as usize;
    let tokens: Vec<TokenId> = (0..signpost_len).map(|_| r.u32()).collect::<Result<_>>()?;
    let pos_len = r.u32()? as usize;
    let positions: Vec<u32> = (0..pos_len).map(|_| r.u32()).collect::<Result<_>>()?;

    let extractor = match mode {
        0 => Extractor::DivergenceEmbedding,
        1 => Extractor::PositionEmbeddings(positions),
        2 => Extractor::PositionTokens(positions),
        other => return Err(Error::Parse(format!("unknown extractor mode {other}"))),
    };

    let payload = match kind {
        0 => {
            let n = r.u32()? as usize;
            Payload::Constant { output: r.f64s(n)? }
        }
        1 => {
            let n = r.u32()? as usize;
            let base = r.f64s(n)?;
            let jacobian = r.mat()?;
            Payload::Linear { base, jacobian }
        }
        2 => {
            let n_entries = r.u32()? as usize;
            let key_width = r.u32()? as usize;
            let out_width = r.u32()? as usize;
            let mut entries = Vec::with_capacity(n_entries);
            for _ in 0..n_entries {
                let key: Vec<TokenId> = (0..key_width).map(|_| r.u32()).collect::<Result<_>>()?;
                let out = r.f64s(out_width)?;
                entries.push((key, out));
            }
            Payload::Lookup { entries }
        }
        3 => {
            let weights = r.mat()?;
            let n = r.u32()? as usize;
            let bias = r.f64s(n)?;
            Payload::Affine { weights, bias }
        }
        4 => {
            let n = r.u32()? as usize;
            let base = r.f64s(n)?;
            let scale = r.f64()?;
            let slot = r.u32()? as usize;
            Payload::Template { base, scale, slot }
        }
        5 => {
            let n_layers = r.u32()? as usize;
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let w = r.mat()?;
                let n = r.u32()? as usize;
                let b = r.f64s(n)?;
                layers.push((w, b));
            }
            Payload::SmallMlp(Mlp { layers })
        }
        other => return Err(Error::Parse(format!("unknown payload kind {other}"))),
    };

    let tau = r.f64()?;
    let fit_error = r.f64()?;
    let certified = r.u8()? != 0;
    let payload_lipschitz = r.f64()?;
    let created_at_query = r.u64()?;
    let created_at_day = r.u32()?;

    Ok((
        Expert {
            id,
            signpost: Sequence::new(tokens),
            node: 0,
            extractor,
            payload,
            tau,
            fit_error,
            certified,
            payload_lipschitz,
            created_at_query,
            created_at_day,
        },
        r.pos,
    ))
}

// ---------------------------------------------------------------------------
// Library and the expert wire file
// ---------------------------------------------------------------------------

const EXPERT_FILE_MAGIC: &[u8; 8] = b"LAWSEXP1";

/// Indexed expert store plus the certification snapshot it was built under.
#[derive(Debug, Clone)]
pub struct ExpertLibrary {
    experts: Vec<Expert>,
    pub delta: f64,
    pub lambda: f64,
    pub c_e: f64,
}

impl ExpertLibrary {
    pub fn new(delta: f64, lambda: f64, c_e: f64) -> Self {
        ExpertLibrary {
            experts: Vec::new(),
            delta,
            lambda,
            c_e,
        }
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn get(&self, id: ExpertId) -> Option<&Expert> {
        self.experts.get(id as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Expert> {
        self.experts.iter()
    }

    pub fn next_id(&self) -> ExpertId {
        self.experts.len() as ExpertId
    }

    /// Insert an expert; its id must equal `next_id()`.
    pub fn add(&mut self, expert: Expert) -> ExpertId {
        assert_eq!(expert.id, self.next_id(), "expert ids are dense");
        let id = expert.id;
        self.experts.push(expert);
        id
    }

    /// Wire file: magic, record count, concatenated canonical records.
    pub fn serialize_all(&self) -> Vec<u8> {
        serialize_records(self.experts.iter())
    }
}

/// Serialize any expert collection in the wire format.
pub fn serialize_records<'a>(experts: impl Iterator<Item = &'a Expert>) -> Vec<u8> {
    let records: Vec<Vec<u8>> = experts.map(serialize).collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(EXPERT_FILE_MAGIC);
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        buf.extend_from_slice(&r);
    }
    buf
}

/// Parse a wire file back into expert records.
pub fn parse_records(bytes: &[u8]) -> Result<Vec<Expert>> {
    if bytes.len() < 12 || &bytes[..8] != EXPERT_FILE_MAGIC {
        return Err(Error::Parse("bad expert file header".into()));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    let mut pos = 12;
    for _ in 0..count {
        let (e, used) = deserialize(&bytes[pos..])?;
        pos += used;
        out.push(e);
    }
    if pos != bytes.len() {
        return Err(Error::Parse("trailing bytes in expert file".into()));
    }
    Ok(out)
}
