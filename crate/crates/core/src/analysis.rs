//! Post-hoc analyzers over run logs, tries, and certificates: growth fits
//! against the occupancy oracle, energy ratios, attention-drop cascade
//! probes, demand profiles, and the hit-rate-vs-N scan.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::beta::beta_reg;

use crate::engine::{EngineConfig, LawsSystem, LogEntry};
use crate::error::{Error, Result};
use crate::expert::{self, ExpertLibrary};
use crate::linalg;
use crate::lipschitz::LipschitzCertificate;
use crate::model::{ForwardOptions, ModelConfig, TransformerModel};
use crate::trie::{NodeId, Trie};
use crate::workload::{sample_with_vocab, Source, SourceSpec};
use crate::Sequence;

// ---------------------------------------------------------------------------
// Energy model
// ---------------------------------------------------------------------------

/// Closed-form per-query cost model.
#[derive(Debug, Clone, Copy)]
pub struct EnergyModel {
    /// Full forward pass: 2·L·n²·d + 2·L·n·d².
    pub c_full: f64,
    /// Cache hit: n + k·d.
    pub c_hit: f64,
}

impl EnergyModel {
    /// From architecture dimensions.
    pub fn from_dims(layers: usize, n: usize, d_model: usize, k: usize) -> Result<Self> {
        let (l, n, d, k) = (layers as f64, n as f64, d_model as f64, k as f64);
        let c_full = 2.0 * l * n * n * d + 2.0 * l * n * d * d;
        let c_hit = n + k * d;
        if !(c_full > c_hit) {
            return Err(Error::Config(format!(
                "degenerate energy model: C_full {c_full} ≤ C_hit {c_hit}"
            )));
        }
        Ok(EnergyModel { c_full, c_hit })
    }

    /// From measured per-path mean costs.
    pub fn from_measured(c_hit: f64, c_full: f64) -> Result<Self> {
        if !(c_full > c_hit && c_hit >= 0.0) {
            return Err(Error::Config("measured costs need C_full > C_hit ≥ 0".into()));
        }
        Ok(EnergyModel { c_full, c_hit })
    }
}

/// Energy per query relative to always running the full model:
/// `H∞·C_hit/C_full + (1 − H∞)`.
pub fn energy_ratio(model: &EnergyModel, h_inf: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&h_inf) {
        return Err(Error::Config(format!("hit rate {h_inf} outside [0, 1]")));
    }
    Ok(h_inf * model.c_hit / model.c_full + (1.0 - h_inf))
}

/// Measured energy ratio of a run log: actual flops over what an all-miss
/// run would have cost.
pub fn measured_energy_ratio(log: &[LogEntry]) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::Analysis("empty run log".into()));
    }
    let spent: u64 = log.iter().map(|e| e.flops).sum();
    let full: u64 = log.iter().map(|e| e.full_flops).sum();
    if full == 0 {
        return Err(Error::Analysis("log has zero counterfactual cost".into()));
    }
    Ok(spent as f64 / full as f64)
}

/// Mean hit and miss costs of a log, when both paths are present.
pub fn measured_path_costs(log: &[LogEntry]) -> Result<(f64, f64)> {
    let (mut hs, mut hn, mut ms, mut mn) = (0u64, 0u64, 0u64, 0u64);
    for e in log {
        if e.hit {
            hs += e.flops;
            hn += 1;
        } else {
            ms += e.flops;
            mn += 1;
        }
    }
    if hn == 0 || mn == 0 {
        return Err(Error::Analysis("need both hits and misses to estimate path costs".into()));
    }
    Ok((hs as f64 / hn as f64, ms as f64 / mn as f64))
}

// ---------------------------------------------------------------------------
// Growth and occupancy
// ---------------------------------------------------------------------------

/// Expected number of support elements visited at least `n_min` times in
/// `n` draws: Σᵢ P(Bin(n, pᵢ) ≥ n_min). With n_min = 1 this is the plain
/// occupancy formula Σᵢ (1 − (1 − pᵢ)ⁿ).
pub fn occupancy_expected(probs: &[f64], n: u64, n_min: u64) -> f64 {
    probs.iter().map(|&p| binomial_tail(n, n_min, p)).sum()
}

/// Conservative variance bound treating the indicators as independent.
pub fn occupancy_variance_bound(probs: &[f64], n: u64, n_min: u64) -> f64 {
    probs
        .iter()
        .map(|&p| {
            let q = binomial_tail(n, n_min, p);
            q * (1.0 - q)
        })
        .sum()
}

/// P(Bin(n, p) ≥ m) via the regularized incomplete beta function.
pub fn binomial_tail(n: u64, m: u64, p: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    if m > n || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    beta_reg(m as f64, (n - m + 1) as f64, p)
}

/// Growth-curve fit against `size(N) = c · min(N/N_min, 2^H)`.
#[derive(Debug, Clone, Copy)]
pub struct GrowthFit {
    /// Least-squares constant over the pre-saturation points.
    pub c: f64,
    /// RMS residual over the pre-saturation points.
    pub residual: f64,
    pub max_size: usize,
    /// Library stopped at the heavy-support size 2^H.
    pub saturated: bool,
}

/// Fit the pre-saturation regime (`N ≤ N_min·2^H`) and check saturation.
pub fn growth_fit(series: &[(u64, usize)], h_bits: f64, n_min: u64) -> Result<GrowthFit> {
    if series.is_empty() {
        return Err(Error::Analysis("empty growth series".into()));
    }
    let support = h_bits.exp2();
    let cutoff = (n_min as f64 * support) as u64;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(n, size) in series.iter().filter(|(n, _)| *n <= cutoff) {
        let x = (n as f64 / n_min as f64).min(support);
        num += x * size as f64;
        den += x * x;
    }
    let c = if den > 0.0 { num / den } else { 0.0 };
    let mut rss = 0.0;
    let mut count = 0usize;
    for &(n, size) in series.iter().filter(|(n, _)| *n <= cutoff) {
        let x = (n as f64 / n_min as f64).min(support);
        let r = size as f64 - c * x;
        rss += r * r;
        count += 1;
    }
    let residual = if count > 0 { (rss / count as f64).sqrt() } else { 0.0 };
    let max_size = series.iter().map(|&(_, s)| s).max().unwrap_or(0);
    Ok(GrowthFit {
        c,
        residual,
        max_size,
        saturated: max_size as f64 <= support && max_size as f64 >= support.floor(),
    })
}

// ---------------------------------------------------------------------------
// Attention-drop cascade
// ---------------------------------------------------------------------------

/// Surprisal threshold below which a dropped ε-weight attention entry cannot
/// recover α-level influence:
/// `h = d_head · ln²(α/ε) / (4κ²·C_E²·ln2·‖q‖²·‖k‖²)`.
pub fn cinderella_threshold(
    alpha: f64,
    eps: f64,
    kappa: f64,
    c_e: f64,
    d_head: usize,
    q_norm: f64,
    k_norm: f64,
) -> Result<f64> {
    if !(alpha >= eps && eps > 0.0) {
        return Err(Error::Config(format!(
            "threshold undefined: need α ≥ ε > 0, got α={alpha}, ε={eps}"
        )));
    }
    if !(kappa > 0.0 && c_e > 0.0 && q_norm > 0.0 && k_norm > 0.0) {
        return Err(Error::Config("cascade constants must be positive".into()));
    }
    let log_ratio = (alpha / eps).ln();
    Ok(d_head as f64 * log_ratio * log_ratio
        / (4.0 * kappa * kappa * c_e * c_e * std::f64::consts::LN_2 * q_norm * q_norm * k_norm * k_norm))
}

/// Expected overflow-set size: `n · log2(PP) / h_cin`.
pub fn overflow_expected(n: usize, perplexity: f64, h_cin: f64) -> Result<f64> {
    if !(perplexity >= 1.0 && h_cin > 0.0) {
        return Err(Error::Config("overflow bound needs PP ≥ 1 and h_cin > 0".into()));
    }
    Ok(n as f64 * perplexity.log2() / h_cin)
}

/// Worst-case influence of zeroing one attention entry of weight `weight`
/// at `layer`: the dropped value, through the layer's output projection and
/// MLP half, the remaining layers, and the unembedding.
pub fn cascade_bound(
    cert: &LipschitzCertificate<f64>,
    layer: usize,
    weight: f64,
    value_norm: f64,
) -> f64 {
    let lc = &cert.layers[layer];
    // The dropped term enters after this layer's attention half; it still
    // passes through the MLP half, the remaining layers, and the unembedding.
    let downstream: f64 = cert.layers[layer + 1..].iter().map(|l| l.kappa).product();
    weight * value_norm * lc.w_o_norm * lc.mlp_factor * downstream * cert.unembed_norm
}

/// One counterfactual attention-zeroing trial.
#[derive(Debug, Clone, Copy)]
pub struct ZeroTrial {
    pub layer: usize,
    pub query_pos: usize,
    pub key_pos: usize,
    pub weight: f64,
    pub value_norm: f64,
    pub output_change: f64,
    pub bound: f64,
    /// Surprisal of the dropped token under the provided trie, if any.
    pub surprisal: Option<f64>,
}

/// Run seeded counterfactual attention-zeroing trials on random sequences.
pub fn attention_zero_probe(
    model: &TransformerModel<f64>,
    cert: &LipschitzCertificate<f64>,
    trie: Option<&Trie>,
    trials: usize,
    seed: u64,
) -> Result<Vec<ZeroTrial>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials);
    let opts = ForwardOptions {
        record_attention: true,
        ..ForwardOptions::default()
    };
    while out.len() < trials {
        let len = rng.gen_range(2..=model.config.n_max);
        let seq = Sequence::new((0..len).map(|_| rng.gen_range(0..model.vocab())).collect());
        let base = model.forward_detailed(&seq, &opts)?;
        let layer = rng.gen_range(0..model.config.layers);
        let i = rng.gen_range(1..len);
        let j = rng.gen_range(0..=i);
        let weight = base.attention[layer].get(i, j);
        let value_norm = base.value_norms[layer][j];

        let zopts = ForwardOptions {
            zero_attention: Some((layer, i, j)),
            ..ForwardOptions::default()
        };
        let zeroed = model.forward_detailed(&seq, &zopts)?;
        let change = linalg::norm2(&linalg::sub(&base.logits, &zeroed.logits));
        let surprisal = match trie {
            Some(t) => Some(t.surprisal(&seq, j)?),
            None => None,
        };
        out.push(ZeroTrial {
            layer,
            query_pos: i,
            key_pos: j,
            weight,
            value_norm,
            output_change: change,
            bound: cascade_bound(cert, layer, weight, value_norm),
            surprisal,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Demand profiles and perplexity
// ---------------------------------------------------------------------------

/// Greedy largest-probability-first expert selection until the covered mass
/// reaches `1 − δ_miss`.
#[derive(Debug, Clone)]
pub struct DemandProfile {
    pub nodes: Vec<NodeId>,
    pub coverage: f64,
    pub download_bytes: u64,
    /// Coverage target was reachable with the available experts.
    pub complete: bool,
}

pub fn demand_profile(trie: &Trie, library: &ExpertLibrary, delta_miss: f64) -> Result<DemandProfile> {
    if !(0.0..=1.0).contains(&delta_miss) {
        return Err(Error::Config(format!("miss budget {delta_miss} outside [0, 1]")));
    }
    let target = 1.0 - delta_miss;
    let mut candidates: Vec<(f64, NodeId, u64)> = library
        .iter()
        .map(|e| {
            let p = trie.node_prob(e.node);
            (p, e.node, expert::description_length(e))
        })
        .collect();
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut nodes = Vec::new();
    let mut coverage = 0.0;
    let mut bits = 0u64;
    for (p, node, len) in candidates {
        if coverage >= target {
            break;
        }
        nodes.push(node);
        coverage += p;
        bits += len;
    }
    Ok(DemandProfile {
        nodes,
        coverage,
        download_bytes: bits / 8,
        complete: coverage >= target,
    })
}

/// Empirical perplexity: 2 to the per-token conditional entropy, with the
/// per-token entropy taken as the visit-weighted mean next-token entropy.
pub fn perplexity(trie: &Trie) -> f64 {
    let mut weighted = 0.0;
    let mut weight = 0.0;
    for id in 0..trie.len() {
        let node = trie.node(id);
        let continuing = (node.count - node.terminal_count) as f64;
        if continuing > 0.0 {
            weighted += continuing * trie.node_conditional_entropy(id);
            weight += continuing;
        }
    }
    if weight == 0.0 {
        return 1.0;
    }
    (weighted / weight).exp2()
}

// ---------------------------------------------------------------------------
// Hit-rate-vs-N scan
// ---------------------------------------------------------------------------

/// One hit-rate curve over a query-count grid.
#[derive(Debug, Clone)]
pub struct PhaseCurve {
    pub seed: u64,
    /// (queries so far, hit rate within the last grid window).
    pub points: Vec<(u64, f64)>,
    /// First N whose window rate reaches half the curve's maximum.
    pub half_max_n: Option<u64>,
}

/// Observe hit-rate curves as the library grows; no assertion is made about
/// the transition shape.
pub fn phase_transition_scan(
    model_config: &ModelConfig<f64>,
    engine_config: &EngineConfig,
    spec: &SourceSpec,
    n_grid: &[u64],
    seeds: &[u64],
) -> Result<Vec<PhaseCurve>> {
    let mut curves = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let model = TransformerModel::new(model_config.clone())?;
        let mut cfg = engine_config.clone();
        cfg.seed = seed;
        let mut sys = LawsSystem::new(model, cfg)?;
        let mut src = Source::new(spec.clone(), seed)?;
        let mut points = Vec::with_capacity(n_grid.len());
        let mut done = 0u64;
        let mut window_hits = 0u64;
        let mut window = 0u64;
        for &target in n_grid {
            while done < target {
                let x = sample_with_vocab(&mut src, sys.model.vocab());
                let r = sys.infer(&x)?;
                if r.hit {
                    window_hits += 1;
                }
                window += 1;
                done += 1;
            }
            points.push((target, window_hits as f64 / window.max(1) as f64));
            window_hits = 0;
            window = 0;
        }
        let max_rate = points.iter().map(|&(_, r)| r).fold(0.0f64, f64::max);
        let half_max_n = points
            .iter()
            .find(|&&(_, r)| r >= max_rate / 2.0 && max_rate > 0.0)
            .map(|&(n, _)| n);
        curves.push(PhaseCurve {
            seed,
            points,
            half_max_n,
        });
    }
    Ok(curves)
}

/// CSV table helpers shared by the analyzers.
pub fn csv_table(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}
