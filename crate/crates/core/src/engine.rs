//! The inference system: any-match routing over the trie, online expert
//! creation from observed misses, audit sampling, and the degenerate
//! router/prefix-cache constructions.
//!
//! Routing walks the query's trie path once. The distance to any expert
//! depends only on the deepest node shared with the expert's signpost, so
//! candidates at each ancestor are the experts anchored in that subtree but
//! not in the next one along the path. A query is a hit when any certified
//! expert's radius covers its distance; the served expert is the one at
//! minimum distance, ties broken toward the lowest id.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expert::{
    certify, evaluate, routing_radius, Expert, ExpertLibrary, Extractor, Mlp, Payload,
};
use crate::linalg::{self, Mat};
use crate::lipschitz::{self, LipschitzCertificate};
use crate::model::TransformerModel;
use crate::trie::{ExpertId, NodeId, Trie};
use crate::{Sequence, TokenId};

/// How the quality threshold is fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaMode {
    /// δ = ε_target + (2 + τ_target)·Λ·C_E, so the default radius lands at
    /// τ_target bits for near-zero fitting error.
    Auto { epsilon_target: f64, tau_target_bits: f64 },
    /// Absolute threshold.
    Fixed(f64),
}

/// Small-MLP fitting settings for level-4 pattern recognition.
#[derive(Debug, Clone, Copy)]
pub struct MlpFit {
    pub hidden: usize,
    pub max_iters: usize,
    pub learning_rate: f64,
}

impl Default for MlpFit {
    fn default() -> Self {
        MlpFit {
            hidden: 32,
            max_iters: 4000,
            learning_rate: 0.05,
        }
    }
}

/// Engine settings.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub delta: DeltaMode,
    /// Observations at a node before an expert is distilled.
    pub n_min: u64,
    /// Reservoir capacity per trie node.
    pub s_max: usize,
    /// Trie smoothing constant.
    pub alpha: f64,
    /// Fraction of hits shadow-checked against the base model.
    pub audit_rate: f64,
    /// Pattern-recognition error target.
    pub epsilon_target: f64,
    pub seed: u64,
    pub mlp: MlpFit,
    /// Entropy threshold for parameter positions, in bits.
    pub h_thresh: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            delta: DeltaMode::Auto {
                epsilon_target: 1e-3,
                tau_target_bits: 4.0,
            },
            n_min: 8,
            s_max: 64,
            alpha: 0.0,
            audit_rate: 0.01,
            epsilon_target: 1e-3,
            seed: 17,
            mlp: MlpFit::default(),
            h_thresh: 1.0,
        }
    }
}

/// Monotone run counters.
#[derive(Debug, Clone, Copy, Default)]
pub struct Counters {
    pub queries: u64,
    pub hits: u64,
    pub misses: u64,
    pub experts_created: u64,
    pub hit_flops: u64,
    pub miss_flops: u64,
    pub audited_hits: u64,
    pub audit_violations: u64,
    /// Hits that fell through to the miss path on extraction failure.
    pub extraction_fallbacks: u64,
}

/// One inference outcome.
#[derive(Debug, Clone)]
pub struct InferenceRecord {
    pub input: Sequence,
    pub output: Vec<f64>,
    pub hit: bool,
    pub expert: Option<ExpertId>,
    /// Trie distance to the serving signpost; +∞ on a miss.
    pub distance: f64,
    /// Multiply-adds actually spent on this query.
    pub flops: u64,
    /// What a full forward pass on this input costs.
    pub full_flops: u64,
    pub audited: bool,
    pub audit_violation: bool,
}

impl InferenceRecord {
    /// Log line: path, expert id, distance, flops, full-pass flops.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            if self.hit { "hit" } else { "miss" },
            self.expert.map(|e| e.to_string()).unwrap_or_else(|| "-".into()),
            self.distance,
            self.flops,
            self.full_flops
        )
    }
}

/// Parsed log line for the analyzers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub hit: bool,
    pub expert: Option<ExpertId>,
    pub distance: f64,
    pub flops: u64,
    pub full_flops: u64,
}

pub fn parse_log_line(line: &str) -> Result<LogEntry> {
    let mut parts = line.split('\t');
    let mut next =
        || parts.next().ok_or_else(|| Error::Parse(format!("short log line {line:?}")));
    let path = next()?;
    let hit = match path {
        "hit" => true,
        "miss" => false,
        other => return Err(Error::Parse(format!("bad path tag {other:?}"))),
    };
    let expert = match next()? {
        "-" => None,
        s => Some(
            s.parse::<ExpertId>()
                .map_err(|_| Error::Parse(format!("bad expert id {s:?}")))?,
        ),
    };
    let distance = next()?
        .parse::<f64>()
        .map_err(|_| Error::Parse("bad distance".into()))?;
    let flops = next()?
        .parse::<u64>()
        .map_err(|_| Error::Parse("bad flops".into()))?;
    let full_flops = next()?
        .parse::<u64>()
        .map_err(|_| Error::Parse("bad full flops".into()))?;
    Ok(LogEntry {
        hit,
        expert,
        distance,
        flops,
        full_flops,
    })
}

/// The system: base model, trie, expert library, quality threshold.
#[derive(Debug, Clone)]
pub struct LawsSystem {
    pub model: TransformerModel<f64>,
    pub trie: Trie,
    pub library: ExpertLibrary,
    pub config: EngineConfig,
    pub certificate: LipschitzCertificate<f64>,
    pub delta: f64,
    pub lambda: f64,
    pub c_e: f64,
    pub counters: Counters,
    /// Timestamp index stamped on newly created experts (set by the fleet).
    pub current_day: u32,
    /// Online distillation on misses (off for degenerate systems).
    pub online_creation: bool,
    /// Trie updates on misses (off for degenerate systems).
    pub insert_on_miss: bool,
    audit_rng: ChaCha8Rng,
}

impl LawsSystem {
    pub fn new(model: TransformerModel<f64>, config: EngineConfig) -> Result<Self> {
        let certificate = lipschitz::lambda(&model, model.config.n_max)?;
        if certificate.vacuous {
            return Err(Error::DegenerateModel(
                "certificate overflowed; all radii vacuous".into(),
            ));
        }
        let c_e = model.embedding_diameter()?;
        let lambda = certificate.lambda;
        let delta = match config.delta {
            DeltaMode::Auto {
                epsilon_target,
                tau_target_bits,
            } => epsilon_target + (2.0 + tau_target_bits) * lambda * c_e,
            DeltaMode::Fixed(v) => v,
        };
        if !(delta > 0.0) {
            return Err(Error::Config(format!(
                "quality threshold {delta} must be positive"
            )));
        }
        let trie = Trie::new(model.vocab(), config.alpha, config.s_max, config.seed ^ 0x7121E);
        let library = ExpertLibrary::new(delta, lambda, c_e);
        let audit_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xA0D17);
        Ok(LawsSystem {
            model,
            trie,
            library,
            config,
            certificate,
            delta,
            lambda,
            c_e,
            counters: Counters::default(),
            current_day: 0,
            online_creation: true,
            insert_on_miss: true,
            audit_rng,
        })
    }

    /// Post-hoc feasibility check coupling δ to the workload entropy: radii
    /// reach the entropy scale only when δ > ε_fit + ΛC_E(2 + H).
    pub fn entropy_coupling_satisfied(&self, fit_error: f64, workload_entropy_bits: f64) -> bool {
        self.delta > fit_error + self.lambda * self.c_e * (2.0 + workload_entropy_bits)
    }

    /// Minimum-distance certified expert whose ball contains `x`.
    pub fn route(&self, x: &Sequence) -> Option<(ExpertId, f64)> {
        let path = self.trie.path_with_probs(x);
        let mut best: Option<(f64, ExpertId)> = None;
        for (i, &(node, p)) in path.iter().enumerate() {
            if p <= 0.0 {
                break;
            }
            let d = -p.log2();
            let here = &self.trie.node(node).subtree_experts;
            let deeper: &[ExpertId] = if i + 1 < path.len() {
                &self.trie.node(path[i + 1].0).subtree_experts
            } else {
                &[]
            };
            for &id in sorted_difference(here, deeper) {
                let e = self.library.get(id).expect("library index");
                if !e.certified || e.tau <= 0.0 {
                    continue;
                }
                if d <= e.tau {
                    let cand = (d, id);
                    best = Some(match best {
                        None => cand,
                        Some(b) => {
                            if cand < b {
                                cand
                            } else {
                                b
                            }
                        }
                    });
                }
            }
        }
        best.map(|(d, id)| (id, d))
    }

    /// One query through the system.
    pub fn infer(&mut self, x: &Sequence) -> Result<InferenceRecord> {
        self.model.check_sequence(x)?;
        self.counters.queries += 1;
        let walk_flops = x.len() as u64;
        let full_flops = self.model.forward_flops(x.len()) + walk_flops;

        if let Some((id, distance)) = self.route(x) {
            let e = self.library.get(id).expect("routed expert");
            match evaluate(e, x, &self.model) {
                Ok((output, eval_flops)) => {
                    let flops = eval_flops + walk_flops;
                    self.counters.hits += 1;
                    self.counters.hit_flops += flops;
                    let audited = self.audit_rng.gen::<f64>() < self.config.audit_rate;
                    let mut audit_violation = false;
                    if audited {
                        self.counters.audited_hits += 1;
                        let truth = self.model.forward(x)?;
                        let err = linalg::norm2(&linalg::sub(&truth, &output));
                        if err > self.delta {
                            audit_violation = true;
                            self.counters.audit_violations += 1;
                        }
                    }
                    return Ok(InferenceRecord {
                        input: x.clone(),
                        output,
                        hit: true,
                        expert: Some(id),
                        distance,
                        flops,
                        full_flops,
                        audited,
                        audit_violation,
                    });
                }
                Err(Error::Extraction(_)) => {
                    self.counters.extraction_fallbacks += 1;
                    // fall through to the miss path
                }
                Err(other) => return Err(other),
            }
        }

        let (output, fwd_flops) = self.model.forward_counted(x)?;
        let flops = fwd_flops + walk_flops;
        self.counters.misses += 1;
        self.counters.miss_flops += flops;
        if self.insert_on_miss {
            let out = output.clone();
            self.update(x, &out)?;
        }
        Ok(InferenceRecord {
            input: x.clone(),
            output,
            hit: false,
            expert: None,
            distance: f64::INFINITY,
            flops,
            full_flops,
            audited: false,
            audit_violation: false,
        })
    }

    /// Record a miss observation and distill an expert once the node has
    /// accumulated enough of them.
    pub fn update(&mut self, x: &Sequence, y: &[f64]) -> Result<()> {
        let node = self.trie.insert(x, y);
        if self.online_creation
            && self.trie.node(node).count >= self.config.n_min
            && self.trie.node(node).expert.is_none()
        {
            self.create_expert_at(node)?;
        }
        Ok(())
    }

    /// Distill an expert from the observations stored at a node.
    pub fn create_expert_at(&mut self, node: NodeId) -> Result<ExpertId> {
        let signpost = Sequence::new(self.trie.path(node));
        let samples = self.trie.node(node).samples.clone();
        if samples.is_empty() {
            return Err(Error::Config("cannot distill from an empty sample buffer".into()));
        }
        let (positions, _flagged) = self.param_positions(node);
        let rec = pattern_recognize(
            &samples,
            &signpost,
            &positions,
            self.config.epsilon_target,
            self.lambda,
            &self.model,
            &self.config.mlp,
            self.config.seed ^ node as u64,
        )?;

        // Fit error is measured at the signpost itself.
        let f_star = match samples.iter().find(|(s, _)| *s == signpost) {
            Some((_, y)) => y.clone(),
            None => self.model.forward(&signpost)?,
        };
        let mut e = Expert {
            id: self.library.next_id(),
            signpost: signpost.clone(),
            node,
            extractor: rec.extractor,
            payload: rec.payload,
            tau: 0.0,
            fit_error: 0.0,
            certified: false,
            payload_lipschitz: rec.payload_lipschitz,
            created_at_query: self.counters.queries,
            created_at_day: self.current_day,
        };
        let (at_star, _) = evaluate(&e, &signpost, &self.model)?;
        e.fit_error = linalg::norm2(&linalg::sub(&f_star, &at_star));
        e.tau = routing_radius(self.delta, e.fit_error, self.lambda, self.c_e)?;
        e.certified = certify(&e, self.delta, self.lambda, self.c_e).certified;
        let id = self.library.add(e);
        self.trie.link_expert(node, id);
        self.counters.experts_created += 1;
        Ok(id)
    }

    /// High-entropy positions after a node's prefix, from subtree statistics.
    /// Returns the positions and whether the sparse fallback fired.
    pub fn param_positions(&self, node: NodeId) -> (Vec<u32>, bool) {
        param_positions(&self.trie, node, self.config.h_thresh)
    }

    /// Run a whole trace, collecting records.
    pub fn run_trace(&mut self, trace: &[Sequence]) -> Result<Vec<InferenceRecord>> {
        trace.iter().map(|x| self.infer(x)).collect()
    }

    /// Which support sequences currently fall inside some routing ball.
    pub fn covered_support(&self, support: &[Sequence]) -> Vec<bool> {
        support.iter().map(|s| self.route(s).is_some()).collect()
    }
}

fn sorted_difference<'a>(a: &'a [ExpertId], b: &[ExpertId]) -> impl Iterator<Item = &'a ExpertId> {
    let mut bi = 0;
    let b = b.to_vec();
    a.iter().filter(move |&&x| {
        while bi < b.len() && b[bi] < x {
            bi += 1;
        }
        !(bi < b.len() && b[bi] == x)
    })
}

/// High-entropy positions after a node's prefix. A subtree with at most one
/// observation cannot support entropy estimates; every post-prefix position
/// is returned, flagged, in that case.
pub fn param_positions(trie: &Trie, node: NodeId, h_thresh: f64) -> (Vec<u32>, bool) {
    let depth = trie.node(node).depth;
    let max_depth = trie.subtree_max_depth(node);
    if trie.node(node).count <= 1 {
        return ((depth as u32..max_depth as u32).collect(), true);
    }
    let mut out = Vec::new();
    for pos in depth..max_depth {
        if let Some(h) = trie.subtree_position_entropy(node, pos) {
            if h > h_thresh {
                out.push(pos as u32);
            }
        }
    }
    (out, false)
}

// ---------------------------------------------------------------------------
// Pattern recognition
// ---------------------------------------------------------------------------

/// Outcome of fitting the cheapest adequate function class.
#[derive(Debug, Clone)]
pub struct Recognition {
    pub payload: Payload,
    pub extractor: Extractor,
    /// Max L2 error over the fitting samples.
    pub max_sample_error: f64,
    pub payload_lipschitz: f64,
}

/// Try function classes in cost order — constant, linear, lookup, template,
/// small MLP — and return the first whose max sample error meets the target.
/// The constant fit is the guaranteed fallback.
#[allow(clippy::too_many_arguments)]
pub fn pattern_recognize(
    samples: &[(Sequence, Vec<f64>)],
    signpost: &Sequence,
    positions: &[u32],
    target_eps: f64,
    lambda: f64,
    model: &TransformerModel<f64>,
    mlp_cfg: &MlpFit,
    seed: u64,
) -> Result<Recognition> {
    if samples.is_empty() {
        return Err(Error::Config("pattern recognition needs at least one sample".into()));
    }
    let out_dim = samples[0].1.len();

    // Level 1: constant at the sample centroid.
    let (centroid, centroid_err) = {
        let mut c = vec![0.0; out_dim];
        for (_, y) in samples {
            linalg::axpy(&mut c, 1.0, y);
        }
        for v in c.iter_mut() {
            *v /= samples.len() as f64;
        }
        let err = samples
            .iter()
            .fold(0.0f64, |acc, (_, y)| acc.max(linalg::norm2(&linalg::sub(y, &c))));
        (c, err)
    };
    if centroid_err <= target_eps {
        return Ok(Recognition {
            payload: Payload::Constant { output: centroid },
            extractor: Extractor::DivergenceEmbedding,
            max_sample_error: centroid_err,
            payload_lipschitz: 0.0,
        });
    }

    // Level 2: linear in the divergence embedding.
    if let Some(rec) = try_linear(samples, signpost, target_eps, model)? {
        if rec.payload_lipschitz <= lambda {
            return Ok(rec);
        }
    }

    // Level 3 and 4 need extraction positions.
    if !positions.is_empty() {
        if let Some(rec) = try_lookup(samples, positions, target_eps, model)? {
            if rec.payload_lipschitz <= lambda {
                return Ok(rec);
            }
        }
        if let Some(rec) = try_template(samples, positions, target_eps, model)? {
            if rec.payload_lipschitz <= lambda {
                return Ok(rec);
            }
        }
        if let Some(rec) = try_mlp(samples, positions, target_eps, lambda, model, mlp_cfg, seed)? {
            return Ok(rec);
        }
    }

    // Fallback: constant with its measured deviation.
    Ok(Recognition {
        payload: Payload::Constant { output: centroid },
        extractor: Extractor::DivergenceEmbedding,
        max_sample_error: centroid_err,
        payload_lipschitz: 0.0,
    })
}

/// Least-squares linear fit `y ≈ base + J·(E(x_div) − E(n*_div))`; falls back
/// to the model Jacobian when the samples cannot determine the fit.
fn try_linear(
    samples: &[(Sequence, Vec<f64>)],
    signpost: &Sequence,
    target_eps: f64,
    model: &TransformerModel<f64>,
) -> Result<Option<Recognition>> {
    let d = model.d_model();
    let out_dim = samples[0].1.len();

    let mut feats = Vec::with_capacity(samples.len());
    for (x, _) in samples {
        let shared = x.common_prefix_len(signpost);
        if shared == x.len() && shared == signpost.len() {
            feats.push(vec![0.0; d]);
        } else if shared == x.len() || shared == signpost.len() {
            return Ok(None); // prefix-comparable sample; no divergence token
        } else {
            let ex = model.embed(x.tokens()[shared])?;
            let en = model.embed(signpost.tokens()[shared])?;
            feats.push(linalg::sub(&ex, &en));
        }
    }

    let (base, jacobian) = if samples.len() >= d + 1 {
        // Normal equations over [1, φ], with a ridge guard for degenerate
        // sample geometry.
        let k = d + 1;
        let mut ata: Mat<f64> = Mat::zeros(k, k);
        for f in &feats {
            let mut row = Vec::with_capacity(k);
            row.push(1.0);
            row.extend_from_slice(f);
            for i in 0..k {
                for j in 0..k {
                    ata.set(i, j, ata.get(i, j) + row[i] * row[j]);
                }
            }
        }
        for i in 0..k {
            ata.set(i, i, ata.get(i, i) + 1e-9);
        }
        let mut base = vec![0.0; out_dim];
        let mut jac = Mat::zeros(out_dim, d);
        for o in 0..out_dim {
            let mut atb = vec![0.0; k];
            for ((_, y), f) in samples.iter().zip(&feats) {
                atb[0] += y[o];
                for j in 0..d {
                    atb[j + 1] += f[j] * y[o];
                }
            }
            let Some(sol) = linalg::solve(&ata, &atb) else {
                return Ok(None);
            };
            base[o] = sol[0];
            for j in 0..d {
                jac.set(o, j, sol[j + 1]);
            }
        }
        (base, jac)
    } else {
        let div_pos = samples
            .iter()
            .map(|(x, _)| x.common_prefix_len(signpost))
            .find(|&s| s < signpost.len())
            .unwrap_or(signpost.len() - 1);
        let jac = model.jacobian_at(signpost, div_pos, model.default_fd_step()?)?;
        let base = match samples.iter().find(|(x, _)| x == signpost) {
            Some((_, y)) => y.clone(),
            None => model.forward(signpost)?,
        };
        (base, jac)
    };

    let mut worst = 0.0f64;
    for ((_, y), f) in samples.iter().zip(&feats) {
        let pred: Vec<f64> = (0..out_dim)
            .map(|o| base[o] + linalg::dot(jacobian.row(o), f))
            .collect();
        worst = worst.max(linalg::norm2(&linalg::sub(y, &pred)));
    }
    if worst <= target_eps {
        let lip = linalg::operator_norm(&jacobian);
        Ok(Some(Recognition {
            payload: Payload::Linear { base, jacobian },
            extractor: Extractor::DivergenceEmbedding,
            max_sample_error: worst,
            payload_lipschitz: lip,
        }))
    } else {
        Ok(None)
    }
}

/// Discrete Lipschitz ratio of a fitted primitive over its keys, in the
/// embedding metric of the extracted slots.
fn discrete_lipschitz(
    keys: &[Vec<TokenId>],
    outs: &[Vec<f64>],
    model: &TransformerModel<f64>,
) -> Result<f64> {
    let mut lip = 0.0f64;
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            let mut de2 = 0.0;
            for (a, b) in keys[i].iter().zip(&keys[j]) {
                if a != b {
                    let ea = model.embed(*a)?;
                    let eb = model.embed(*b)?;
                    let d = linalg::norm2(&linalg::sub(&ea, &eb));
                    de2 += d * d;
                }
            }
            let de = de2.sqrt();
            if de > 0.0 {
                let dy = linalg::norm2(&linalg::sub(&outs[i], &outs[j]));
                lip = lip.max(dy / de);
            }
        }
    }
    Ok(lip)
}

fn try_lookup(
    samples: &[(Sequence, Vec<f64>)],
    positions: &[u32],
    target_eps: f64,
    model: &TransformerModel<f64>,
) -> Result<Option<Recognition>> {
    let extractor = Extractor::PositionTokens(positions.to_vec());
    let mut table: Vec<(Vec<TokenId>, Vec<f64>, u32)> = Vec::new();
    for (x, y) in samples {
        let Ok(key) = extractor.extract_tokens(x) else {
            return Ok(None);
        };
        match table.iter_mut().find(|(k, _, _)| *k == key) {
            Some((_, acc, n)) => {
                linalg::axpy(acc, 1.0, y);
                *n += 1;
            }
            None => table.push((key, y.clone(), 1)),
        }
    }
    for (_, acc, n) in table.iter_mut() {
        for v in acc.iter_mut() {
            *v /= *n as f64;
        }
    }
    let entries: Vec<(Vec<TokenId>, Vec<f64>)> =
        table.into_iter().map(|(k, o, _)| (k, o)).collect();

    let mut worst = 0.0f64;
    for (x, y) in samples {
        let key = extractor.extract_tokens(x)?;
        let out = &entries.iter().find(|(k, _)| *k == key).unwrap().1;
        worst = worst.max(linalg::norm2(&linalg::sub(y, out)));
    }
    if worst <= target_eps {
        let keys: Vec<Vec<TokenId>> = entries.iter().map(|(k, _)| k.clone()).collect();
        let outs: Vec<Vec<f64>> = entries.iter().map(|(_, o)| o.clone()).collect();
        let lip = discrete_lipschitz(&keys, &outs, model)?;
        Ok(Some(Recognition {
            payload: Payload::Lookup { entries },
            extractor,
            max_sample_error: worst,
            payload_lipschitz: lip,
        }))
    } else {
        Ok(None)
    }
}

/// Fit `y ≈ base + scale·onehot(slot token)` over a single extracted slot.
fn try_template(
    samples: &[(Sequence, Vec<f64>)],
    positions: &[u32],
    target_eps: f64,
    model: &TransformerModel<f64>,
) -> Result<Option<Recognition>> {
    if positions.len() != 1 {
        return Ok(None);
    }
    let extractor = Extractor::PositionTokens(positions.to_vec());
    let out_dim = samples[0].1.len();
    let mut slot_tokens = Vec::with_capacity(samples.len());
    for (x, _) in samples {
        let Ok(key) = extractor.extract_tokens(x) else {
            return Ok(None);
        };
        if key[0] as usize >= out_dim {
            return Ok(None);
        }
        slot_tokens.push(key[0]);
    }

    // Dimension-wise base from samples whose slot token is elsewhere.
    let mut base = vec![0.0; out_dim];
    for (v, bv) in base.iter_mut().enumerate() {
        let (mut acc, mut n) = (0.0, 0u32);
        for ((_, y), &t) in samples.iter().zip(&slot_tokens) {
            if t as usize != v {
                acc += y[v];
                n += 1;
            }
        }
        if n == 0 {
            return Ok(None);
        }
        *bv = acc / n as f64;
    }
    let (mut acc, mut n) = (0.0, 0u32);
    for ((_, y), &t) in samples.iter().zip(&slot_tokens) {
        acc += y[t as usize] - base[t as usize];
        n += 1;
    }
    let scale = acc / n as f64;

    let mut worst = 0.0f64;
    for ((_, y), &t) in samples.iter().zip(&slot_tokens) {
        let mut pred = base.clone();
        pred[t as usize] += scale;
        worst = worst.max(linalg::norm2(&linalg::sub(y, &pred)));
    }
    if worst <= target_eps {
        let keys: Vec<Vec<TokenId>> = slot_tokens.iter().map(|&t| vec![t]).collect();
        let outs: Vec<Vec<f64>> = slot_tokens
            .iter()
            .map(|&t| {
                let mut p = base.clone();
                p[t as usize] += scale;
                p
            })
            .collect();
        let lip = discrete_lipschitz(&keys, &outs, model)?;
        Ok(Some(Recognition {
            payload: Payload::Template {
                base,
                scale,
                slot: 0,
            },
            extractor,
            max_sample_error: worst,
            payload_lipschitz: lip,
        }))
    } else {
        Ok(None)
    }
}

fn try_mlp(
    samples: &[(Sequence, Vec<f64>)],
    positions: &[u32],
    target_eps: f64,
    lambda: f64,
    model: &TransformerModel<f64>,
    cfg: &MlpFit,
    seed: u64,
) -> Result<Option<Recognition>> {
    let extractor = Extractor::PositionEmbeddings(positions.to_vec());
    let mut feats = Vec::with_capacity(samples.len());
    for (x, _) in samples {
        match extractor.extract_embedded(x, model) {
            Ok(f) => feats.push(f),
            Err(_) => return Ok(None),
        }
    }
    let ys: Vec<&[f64]> = samples.iter().map(|(_, y)| y.as_slice()).collect();
    let Some(mlp) = fit_small_mlp(&feats, &ys, cfg, target_eps, seed) else {
        return Ok(None);
    };
    let lip = mlp.lipschitz();
    if lip > lambda {
        // Steeper than the base model: not certifiable.
        return Ok(None);
    }
    let mut worst = 0.0f64;
    for (f, y) in feats.iter().zip(&ys) {
        let (pred, _) = mlp.forward(f);
        worst = worst.max(linalg::norm2(&linalg::sub(y, &pred)));
    }
    if worst <= target_eps {
        Ok(Some(Recognition {
            payload: Payload::SmallMlp(mlp),
            extractor,
            max_sample_error: worst,
            payload_lipschitz: lip,
        }))
    } else {
        Ok(None)
    }
}

/// Full-batch gradient descent on MSE for a two-hidden-layer ReLU net,
/// stopping early once the max sample error meets the target.
pub fn fit_small_mlp(
    feats: &[Vec<f64>],
    ys: &[&[f64]],
    cfg: &MlpFit,
    target_eps: f64,
    seed: u64,
) -> Option<Mlp> {
    if feats.is_empty() {
        return None;
    }
    let in_dim = feats[0].len();
    let out_dim = ys[0].len();
    let h = cfg.hidden.min(128);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = |rows: usize, cols: usize| -> Mat<f64> {
        let s = (2.0 / (rows + cols) as f64).sqrt();
        Mat::from_fn(rows, cols, |_, _| (rng.gen::<f64>() * 2.0 - 1.0) * s)
    };
    let mut w1 = init(h, in_dim);
    let mut w2 = init(h, h);
    let mut w3 = init(out_dim, h);
    let mut b1 = vec![0.0; h];
    let mut b2 = vec![0.0; h];
    let mut b3 = vec![0.0; out_dim];

    let n = feats.len() as f64;
    for _ in 0..cfg.max_iters {
        let mut worst = 0.0f64;
        let mut gw1: Mat<f64> = Mat::zeros(h, in_dim);
        let mut gw2: Mat<f64> = Mat::zeros(h, h);
        let mut gw3: Mat<f64> = Mat::zeros(out_dim, h);
        let mut gb1 = vec![0.0; h];
        let mut gb2 = vec![0.0; h];
        let mut gb3 = vec![0.0; out_dim];

        for (f, y) in feats.iter().zip(ys) {
            let z1: Vec<f64> = w1.matvec(f).iter().zip(&b1).map(|(v, b)| v + b).collect();
            let a1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();
            let z2: Vec<f64> = w2.matvec(&a1).iter().zip(&b2).map(|(v, b)| v + b).collect();
            let a2: Vec<f64> = z2.iter().map(|&v| v.max(0.0)).collect();
            let out: Vec<f64> = w3.matvec(&a2).iter().zip(&b3).map(|(v, b)| v + b).collect();
            let err = linalg::sub(&out, y);
            worst = worst.max(linalg::norm2(&err));

            let d3: Vec<f64> = err.iter().map(|e| 2.0 * e / n).collect();
            for (o, dv) in d3.iter().enumerate() {
                gb3[o] += dv;
                for j in 0..h {
                    gw3.set(o, j, gw3.get(o, j) + dv * a2[j]);
                }
            }
            let mut d2 = w3.matvec_t(&d3);
            for (dv, z) in d2.iter_mut().zip(&z2) {
                if *z <= 0.0 {
                    *dv = 0.0;
                }
            }
            for (o, dv) in d2.iter().enumerate() {
                gb2[o] += dv;
                for j in 0..h {
                    gw2.set(o, j, gw2.get(o, j) + dv * a1[j]);
                }
            }
            let mut d1 = w2.matvec_t(&d2);
            for (dv, z) in d1.iter_mut().zip(&z1) {
                if *z <= 0.0 {
                    *dv = 0.0;
                }
            }
            for (o, dv) in d1.iter().enumerate() {
                gb1[o] += dv;
                for j in 0..in_dim {
                    gw1.set(o, j, gw1.get(o, j) + dv * f[j]);
                }
            }
        }

        if worst <= target_eps {
            break;
        }
        let lr = cfg.learning_rate;
        for (w, g) in [(&mut w1, &gw1), (&mut w2, &gw2), (&mut w3, &gw3)] {
            for i in 0..w.data().len() {
                w.data_mut()[i] -= lr * g.data()[i];
            }
        }
        for (b, g) in [(&mut b1, &gb1), (&mut b2, &gb2), (&mut b3, &gb3)] {
            for (bi, gi) in b.iter_mut().zip(g) {
                *bi -= lr * gi;
            }
        }
    }

    Some(Mlp {
        layers: vec![(w1, b1), (w2, b2), (w3, b3)],
    })
}

// ---------------------------------------------------------------------------
// Abort threshold and sample-count helpers
// ---------------------------------------------------------------------------

/// Cost-optimal routing radius under the quadratic error-cost model:
/// `τ* = 2(C_full − C_hit)·c / (λ·‖H‖²·Λ²·C_E²)`.
pub fn abort_threshold(
    c_full: f64,
    c_hit: f64,
    lambda_err: f64,
    hessian_norm: f64,
    lambda: f64,
    c_e: f64,
    density: f64,
) -> Result<f64> {
    if !(c_full > 0.0 && c_hit > 0.0 && c_full >= c_hit) {
        return Err(Error::Config("need C_full ≥ C_hit > 0".into()));
    }
    if lambda_err < 0.0 || hessian_norm < 0.0 || !(lambda > 0.0) || !(c_e > 0.0) || !(density > 0.0)
    {
        return Err(Error::Config("abort-threshold inputs must be positive".into()));
    }
    let denom = lambda_err * hessian_norm.powi(2) * lambda.powi(2) * c_e.powi(2);
    if denom == 0.0 {
        // No downstream error penalty: the radius is unbounded.
        return Ok(f64::INFINITY);
    }
    Ok(2.0 * (c_full - c_hit) * density / denom)
}

/// Expected total cost at radius τ under the small-radius local model
/// (`P(hit) = c·τ`, squared error growing as the radius squared), for
/// plotting and grid checks against the closed form.
#[allow(clippy::too_many_arguments)]
pub fn abort_cost(
    tau: f64,
    c_full: f64,
    c_hit: f64,
    lambda_err: f64,
    hessian_norm: f64,
    lambda: f64,
    c_e: f64,
    density: f64,
) -> f64 {
    let p_hit = density * tau;
    let err2 = 0.25 * hessian_norm.powi(2) * (lambda * c_e).powi(2) * tau.powi(2);
    c_hit * p_hit + c_full * (1.0 - p_hit) + lambda_err * err2
}

/// Sample-count helper `N_min = (d_fat/ε²)·ln(d_fat/δ)` with the absorbed
/// constant set to 1.
pub fn pac_n_min(epsilon: f64, delta_pac: f64, d_fat: f64) -> Result<f64> {
    if !(epsilon > 0.0 && delta_pac > 0.0 && delta_pac < 1.0 && d_fat >= 1.0) {
        return Err(Error::Config("bad PAC parameters".into()));
    }
    Ok(d_fat / (epsilon * epsilon) * (d_fat / delta_pac).ln())
}

/// Fat-shattering dimensions of the primitive classes.
pub fn d_fat_linear(k: usize, d_out: usize) -> f64 {
    (k * d_out) as f64
}
pub fn d_fat_lookup(table: usize) -> f64 {
    table as f64
}
pub fn d_fat_template(len: usize) -> f64 {
    len as f64
}

// ---------------------------------------------------------------------------
// Degenerate constructions
// ---------------------------------------------------------------------------

/// Fixed router: depth-1 trie, one expert per leading token, infinite radii,
/// no online creation. Reproduces top-1 nearest-signpost routing.
pub fn build_moe_degenerate(
    model: TransformerModel<f64>,
    payloads: Vec<Vec<f64>>,
    config: EngineConfig,
) -> Result<LawsSystem> {
    if payloads.is_empty() {
        return Err(Error::Config("need at least one expert payload".into()));
    }
    if payloads.len() > model.vocab() as usize {
        return Err(Error::Config("more experts than leading tokens".into()));
    }
    let mut sys = LawsSystem::new(model, config)?;
    sys.online_creation = false;
    sys.insert_on_miss = false;
    for (k, payload) in payloads.into_iter().enumerate() {
        let signpost = Sequence::new(vec![k as TokenId]);
        let truth = sys.model.forward(&signpost)?;
        let node = sys.trie.insert(&signpost, &truth);
        let fit_error = linalg::norm2(&linalg::sub(&truth, &payload));
        let e = Expert {
            id: sys.library.next_id(),
            signpost,
            node,
            extractor: Extractor::DivergenceEmbedding,
            payload: Payload::Constant { output: payload },
            tau: f64::INFINITY,
            fit_error,
            certified: true, // fixed library by construction
            payload_lipschitz: 0.0,
            created_at_query: 0,
            created_at_day: 0,
        };
        let id = sys.library.add(e);
        sys.trie.link_expert(node, id);
    }
    Ok(sys)
}

/// Prefix cache: one stored output per prefix, radius pinned to the prefix's
/// own path surprisal, no online creation.
pub fn build_kv_degenerate(
    model: TransformerModel<f64>,
    prefixes: Vec<Sequence>,
    config: EngineConfig,
) -> Result<LawsSystem> {
    if prefixes.is_empty() {
        return Err(Error::Config("need at least one prefix".into()));
    }
    let mut sys = LawsSystem::new(model, config)?;
    sys.online_creation = false;
    sys.insert_on_miss = false;
    let mut nodes = Vec::with_capacity(prefixes.len());
    for p in &prefixes {
        let truth = sys.model.forward(p)?;
        let node = sys.trie.insert(p, &truth);
        nodes.push((node, p.clone(), truth));
    }
    // Radii reflect the final constructed trie.
    for (node, signpost, stored) in nodes {
        let p_hat = sys.trie.node_prob(node);
        let tau = -p_hat.log2();
        let e = Expert {
            id: sys.library.next_id(),
            signpost,
            node,
            extractor: Extractor::DivergenceEmbedding,
            payload: Payload::Constant { output: stored },
            tau,
            fit_error: 0.0,
            certified: true,
            payload_lipschitz: 0.0,
            created_at_query: 0,
            created_at_day: 0,
        };
        let id = sys.library.add(e);
        sys.trie.link_expert(node, id);
    }
    Ok(sys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::workload::{sample_with_vocab, Source, SourceSpec};

    fn toy_engine(n_min: u64, tau_bits: f64) -> LawsSystem {
        let model = TransformerModel::new(ModelConfig::default()).unwrap();
        let config = EngineConfig {
            n_min,
            delta: DeltaMode::Auto {
                epsilon_target: 1e-3,
                tau_target_bits: tau_bits,
            },
            ..EngineConfig::default()
        };
        LawsSystem::new(model, config).unwrap()
    }

    #[test]
    fn empty_library_always_misses() {
        let mut sys = toy_engine(u64::MAX, 4.0);
        for t in 0..10u32 {
            let r = sys.infer(&Sequence::new(vec![t, t + 1])).unwrap();
            assert!(!r.hit);
            assert_eq!(r.distance, f64::INFINITY);
        }
        assert_eq!(sys.counters.hits + sys.counters.misses, sys.counters.queries);
    }

    #[test]
    fn repeated_query_hits_its_own_expert() {
        let mut sys = toy_engine(1, 8.0);
        let x = Sequence::new(vec![3, 1, 4]);
        let first = sys.infer(&x).unwrap();
        assert!(!first.hit);
        assert_eq!(sys.library.len(), 1);
        let second = sys.infer(&x).unwrap();
        assert!(second.hit);
        assert_eq!(second.expert, Some(0));
        // Self-distance is the path surprisal, here −log2(1) = 0.
        assert_eq!(second.distance, 0.0);
    }

    #[test]
    fn n_min_threshold_semantics() {
        let mut sys = toy_engine(10, 8.0);
        let x = Sequence::new(vec![5, 2]);
        for _ in 0..9 {
            sys.infer(&x).unwrap();
            assert_eq!(sys.library.len(), 0);
        }
        sys.infer(&x).unwrap();
        assert_eq!(sys.library.len(), 1, "10th visit creates exactly one expert");
        sys.infer(&x).unwrap();
        assert_eq!(sys.library.len(), 1);
    }

    #[test]
    fn replay_reproduces_identical_records() {
        let trace: Vec<Sequence> = {
            let mut src = Source::new(SourceSpec::Uniform { m: 16, seq_len: 1 }, 5).unwrap();
            (0..10_000).map(|_| sample_with_vocab(&mut src, 32)).collect()
        };
        let run = || -> Vec<String> {
            let mut sys = toy_engine(4, 14.0);
            let records = sys.run_trace(&trace).unwrap();
            for r in &records {
                if r.hit {
                    let e = sys.library.get(r.expert.unwrap()).unwrap();
                    assert!(r.distance <= e.tau, "hit outside the serving radius");
                }
            }
            records.iter().map(|r| r.to_line()).collect()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.iter().any(|l| l.starts_with("hit")));
    }

    #[test]
    fn audited_hits_stay_within_delta() {
        let model = TransformerModel::new(ModelConfig::default()).unwrap();
        let config = EngineConfig {
            n_min: 1,
            audit_rate: 1.0,
            delta: DeltaMode::Auto {
                epsilon_target: 1e-3,
                tau_target_bits: 10.0,
            },
            ..EngineConfig::default()
        };
        let mut sys = LawsSystem::new(model, config).unwrap();
        let mut src = Source::new(SourceSpec::Uniform { m: 16, seq_len: 1 }, 6).unwrap();
        for _ in 0..500 {
            let x = sample_with_vocab(&mut src, 32);
            sys.infer(&x).unwrap();
        }
        assert!(sys.counters.audited_hits > 100);
        assert_eq!(sys.counters.audit_violations, 0);
    }

    #[test]
    fn log_lines_round_trip() {
        let mut sys = toy_engine(1, 8.0);
        let x = Sequence::new(vec![2, 2]);
        let r1 = sys.infer(&x).unwrap();
        let r2 = sys.infer(&x).unwrap();
        for r in [r1, r2] {
            let e = parse_log_line(&r.to_line()).unwrap();
            assert_eq!(e.hit, r.hit);
            assert_eq!(e.expert, r.expert);
            assert_eq!(e.flops, r.flops);
            assert_eq!(e.full_flops, r.full_flops);
            assert!(e.distance == r.distance || (e.distance.is_infinite() && r.distance.is_infinite()));
        }
        assert!(parse_log_line("bogus\t-\t0\t0\t0").is_err());
    }

    #[test]
    fn pattern_recognize_constant_on_identical_outputs() {
        let model = TransformerModel::new(ModelConfig::default()).unwrap();
        let x = Sequence::new(vec![1, 2]);
        let y = vec![0.5; 32];
        let samples = vec![(x.clone(), y.clone()), (x.clone(), y.clone())];
        let rec =
            pattern_recognize(&samples, &x, &[], 1e-6, 1e6, &model, &MlpFit::default(), 1).unwrap();
        assert!(matches!(rec.payload, Payload::Constant { .. }));
        assert_eq!(rec.max_sample_error, 0.0);
        assert_eq!(rec.payload_lipschitz, 0.0);
    }

    #[test]
    fn pattern_recognize_recovers_synthetic_linear_map() {
        let model = TransformerModel::new(ModelConfig::default()).unwrap();
        let signpost = Sequence::new(vec![4, 9, 2]);
        let d = model.d_model();
        // Ground-truth map y = A·(E(t) − E(9)) + b at the divergence slot 1.
        let a = Mat::from_fn(32, d, |i, j| ((i * 7 + j * 13) % 11) as f64 * 0.05 - 0.2);
        let b: Vec<f64> = (0..32).map(|i| i as f64 * 0.01).collect();
        let mut samples = Vec::new();
        for t in 0..20u32 {
            let x = Sequence::new(vec![4, t, 2]);
            let phi = if t == 9 {
                vec![0.0; d]
            } else {
                linalg::sub(&model.embed(t).unwrap(), &model.embed(9).unwrap())
            };
            let y: Vec<f64> = (0..32).map(|o| b[o] + linalg::dot(a.row(o), &phi)).collect();
            samples.push((x, y));
        }
        let rec = pattern_recognize(
            &samples,
            &signpost,
            &[1],
            1e-8,
            1e9,
            &model,
            &MlpFit::default(),
            1,
        )
        .unwrap();
        assert!(
            matches!(rec.payload, Payload::Linear { .. }),
            "expected linear, got level {}",
            rec.payload.level()
        );
        assert!(rec.max_sample_error < 1e-8);
    }

    #[test]
    fn pattern_recognize_finds_exact_lookup() {
        let model = TransformerModel::new(ModelConfig::default()).unwrap();
        let signpost = Sequence::new(vec![4, 0, 2]);
        // 16-entry key → value map over slot 1; outputs carry no linear
        // structure in the embeddings.
        let mut samples = Vec::new();
        for t in 0..16u32 {
            let x = Sequence::new(vec![4, t, 2]);
            let y: Vec<f64> = (0..32)
                .map(|o| (((t * 31 + o * 17) % 7) as f64).sin())
                .collect();
            for _ in 0..2 {
                samples.push((x.clone(), y.clone()));
            }
        }
        let rec = pattern_recognize(
            &samples,
            &signpost,
            &[1],
            1e-9,
            1e9,
            &model,
            &MlpFit::default(),
            1,
        )
        .unwrap();
        assert!(
            matches!(rec.payload, Payload::Lookup { .. }),
            "expected lookup, got level {}",
            rec.payload.level()
        );
        assert_eq!(rec.max_sample_error, 0.0);
        if let Payload::Lookup { entries } = &rec.payload {
            assert_eq!(entries.len(), 16);
        }
    }

    #[test]
    fn pattern_recognize_falls_back_to_constant() {
        let model = TransformerModel::new(ModelConfig::default()).unwrap();
        let signpost = Sequence::new(vec![1, 2]);
        let samples = vec![
            (Sequence::new(vec![1, 2]), vec![0.0; 32]),
            (Sequence::new(vec![1, 3]), vec![1.0; 32]),
        ];
        // Impossible target and a lambda so tight nothing steeper than a
        // constant can certify: fallback constant with measured deviation.
        let rec = pattern_recognize(
            &samples,
            &signpost,
            &[],
            1e-12,
            1e-12,
            &model,
            &MlpFit {
                max_iters: 10,
                ..MlpFit::default()
            },
            1,
        )
        .unwrap();
        assert!(matches!(rec.payload, Payload::Constant { .. }));
        assert!(rec.max_sample_error > 0.0);
    }

    #[test]
    fn small_mlp_fit_converges_on_smooth_target() {
        // Grid over [0,1]²; smooth 2-output target.
        let mut feats = Vec::new();
        let mut outs = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                let (x, y) = (i as f64 / 7.0, j as f64 / 7.0);
                feats.push(vec![x, y]);
                outs.push(vec![(x + y) * 0.5, (x * y) * 0.5]);
            }
        }
        let ys: Vec<&[f64]> = outs.iter().map(|o| o.as_slice()).collect();
        let cfg = MlpFit {
            hidden: 16,
            max_iters: 6000,
            learning_rate: 0.1,
        };
        let target = 0.05;
        let mlp = fit_small_mlp(&feats, &ys, &cfg, target, 2).unwrap();
        let worst = feats
            .iter()
            .zip(&ys)
            .map(|(f, y)| linalg::norm2(&linalg::sub(&mlp.forward(f).0, y)))
            .fold(0.0f64, f64::max);
        assert!(worst <= target, "mlp did not converge: {worst}");
        assert!(mlp.lipschitz().is_finite() && mlp.lipschitz() > 0.0);
        assert_eq!(mlp.layers.len(), 3, "two hidden layers plus the output map");
        assert!(mlp.layers.iter().all(|(w, _)| w.rows() <= 128));
    }

    #[test]
    fn param_positions_deterministic_suffix_is_empty() {
        let mut sys = toy_engine(1, 4.0);
        for _ in 0..10 {
            sys.trie.insert(&Sequence::new(vec![1, 2, 3]), &[0.0]);
        }
        let node = sys.trie.find(&[1]).unwrap();
        let (pos, flagged) = sys.param_positions(node);
        assert!(pos.is_empty());
        assert!(!flagged);
    }

    #[test]
    fn param_positions_finds_uniform_branch() {
        let mut sys = toy_engine(1, 4.0);
        // Position 1 branches uniformly 4 ways; positions 0 and 2 are fixed.
        for b in 0..4u32 {
            for _ in 0..8 {
                sys.trie.insert(&Sequence::new(vec![7, b, 3]), &[0.0]);
            }
        }
        let node = sys.trie.find(&[7]).unwrap();
        let (pos, flagged) = sys.param_positions(node);
        assert_eq!(pos, vec![1]);
        assert!(!flagged);
    }

    #[test]
    fn param_positions_sparse_subtree_flagged() {
        let mut sys = toy_engine(1, 4.0);
        sys.trie.insert(&Sequence::new(vec![7, 1, 3]), &[0.0]);
        let node = sys.trie.find(&[7]).unwrap();
        let (pos, flagged) = sys.param_positions(node);
        assert!(flagged);
        assert_eq!(pos, vec![1, 2]);
    }

    #[test]
    fn param_positions_recovers_declared_slots() {
        let mut sys = toy_engine(1, 4.0);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        // Skeleton [9, slot, 5, slot, 0] with slots at positions 1 and 3.
        for _ in 0..200 {
            let s = Sequence::new(vec![9, rng.gen_range(0..8), 5, rng.gen_range(0..8), 0]);
            sys.trie.insert(&s, &[0.0]);
        }
        let node = sys.trie.find(&[9]).unwrap();
        let (pos, flagged) = sys.param_positions(node);
        assert!(!flagged);
        assert_eq!(pos, vec![1, 3]);
    }

    #[test]
    fn abort_threshold_formula_and_grid_minimum_agree() {
        let (c_full, c_hit, lam_err, h, lambda, c_e) = (1000.0, 10.0, 0.5, 2.0, 3.0, 1.5);
        let tau = abort_threshold(c_full, c_hit, lam_err, h, lambda, c_e, 1.0).unwrap();
        let expect = 2.0 * (c_full - c_hit) / (lam_err * h * h * lambda * lambda * c_e * c_e);
        assert!((tau - expect).abs() < 1e-9);

        // Grid search over the declared cost model.
        let mut best = (f64::INFINITY, 0.0);
        let mut t = 0.0;
        while t < tau * 3.0 {
            let c = abort_cost(t, c_full, c_hit, lam_err, h, lambda, c_e, 1.0);
            if c < best.0 {
                best = (c, t);
            }
            t += tau / 500.0;
        }
        assert!(
            (best.1 - tau).abs() <= tau / 250.0,
            "grid minimum {} vs closed form {tau}",
            best.1
        );

        assert_eq!(abort_threshold(10.0, 10.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(
            abort_threshold(100.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn moe_degenerate_routes_every_query() {
        let model = TransformerModel::new(ModelConfig::default()).unwrap();
        let payloads: Vec<Vec<f64>> = (0..8)
            .map(|k| model.forward(&Sequence::new(vec![k as TokenId])).unwrap())
            .collect();
        let mut sys = build_moe_degenerate(model, payloads, EngineConfig::default()).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let lib_before = sys.library.len();
        for _ in 0..500 {
            let first = rng.gen_range(0..8u32);
            let len = rng.gen_range(1..=4usize);
            let mut toks = vec![first];
            toks.extend((1..len).map(|_| rng.gen_range(0..32u32)));
            let r = sys.infer(&Sequence::new(toks)).unwrap();
            assert!(r.hit, "degenerate router must always hit");
            assert_eq!(r.expert, Some(first), "top-1 routing by leading token");
        }
        assert_eq!(sys.library.len(), lib_before, "library size stays constant");
    }

    #[test]
    fn kv_degenerate_prefix_semantics() {
        let model = TransformerModel::new(ModelConfig::default()).unwrap();
        let prefixes = vec![
            Sequence::new(vec![1, 2]),
            Sequence::new(vec![5, 6]),
            Sequence::new(vec![9, 10]),
            Sequence::new(vec![13, 14]),
        ];
        let mut sys = build_kv_degenerate(model, prefixes, EngineConfig::default()).unwrap();
        // Extending a stored prefix hits.
        let r = sys.infer(&Sequence::new(vec![1, 2, 30, 31])).unwrap();
        assert!(r.hit);
        assert_eq!(r.expert, Some(0));
        // Sharing no stored prefix misses and does not grow the library.
        let r2 = sys.infer(&Sequence::new(vec![20, 21])).unwrap();
        assert!(!r2.hit);
        assert_eq!(sys.library.len(), 4);
    }

    #[test]
    fn forward_flops_closed_form_matches_counter() {
        let model: TransformerModel<f64> = TransformerModel::new(ModelConfig::default()).unwrap();
        for n in [1usize, 2, 5, 16] {
            let seq = Sequence::new((0..n as u32).collect());
            let (_, counted) = model.forward_counted(&seq).unwrap();
            assert_eq!(counted, model.forward_flops(n), "length {n}");
        }
    }

    #[test]
    fn pac_helper_families() {
        let n = pac_n_min(0.1, 0.05, d_fat_linear(2, 32)).unwrap();
        assert!(n > 0.0);
        assert!(pac_n_min(0.1, 0.05, d_fat_lookup(16)).unwrap() < n);
        assert!(pac_n_min(0.0, 0.05, 1.0).is_err());
        assert_eq!(d_fat_template(5), 5.0);
    }
}
