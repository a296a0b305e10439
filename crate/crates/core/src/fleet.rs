//! Fleet simulation: K units draw queries through one shared system, with
//! per-day metrics, update deltas in the expert wire format, and optional
//! differential-privacy noising of shipped experts.
//!
//! Interleaving is unit 0..K−1 per task slot, fully serialized, so a fleet
//! run is replayable through a single engine and the shared library is
//! byte-identical to that replay.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::engine::{EngineConfig, LawsSystem};
use crate::error::{Error, Result};
use crate::expert::{self, certify, evaluate, Expert, Payload};
use crate::linalg;
use crate::model::TransformerModel;
use crate::workload::{sample_with_vocab, Source, SourceSpec};
use crate::Sequence;

/// Differential-privacy settings for shipped experts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpParams {
    pub epsilon: f64,
    pub delta: f64,
}

/// Fleet settings.
#[derive(Debug, Clone)]
pub struct FleetConfig {
    /// Cooperating units.
    pub units: usize,
    /// Tasks per unit per day.
    pub tasks_per_day: usize,
    pub days: usize,
    /// Shared source distribution; each unit gets its own seeded stream.
    pub source: SourceSpec,
    pub seed: u64,
    pub dp: Option<DpParams>,
}

impl FleetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.units < 1 || self.tasks_per_day < 1 || self.days < 1 {
            return Err(Error::Config("fleet needs units, tasks, days ≥ 1".into()));
        }
        self.source.validate()?;
        if let Some(dp) = self.dp {
            if !(dp.epsilon > 0.0) || !(dp.delta > 0.0 && dp.delta < 1.0) {
                return Err(Error::Config("bad differential-privacy parameters".into()));
            }
        }
        Ok(())
    }
}

/// Per-day snapshot.
#[derive(Debug, Clone, Copy)]
pub struct DayMetrics {
    pub day: u32,
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
    pub library_size: usize,
    pub delta_bits: u64,
    pub delta_experts: usize,
}

impl DayMetrics {
    pub fn csv_header() -> &'static str {
        "day,hits,misses,library_size,delta_bits"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.day, self.hits, self.misses, self.library_size, self.delta_bits
        )
    }
}

/// One period's shipped update.
#[derive(Debug, Clone)]
pub struct OtaDelta {
    pub period: u32,
    /// Experts shipped this period (noised when DP is on).
    pub records: Vec<Expert>,
    /// Wire bytes (record-count header plus canonical records).
    pub bytes: Vec<u8>,
    pub total_bits: u64,
    /// Per-unit bits when unit domains are disjoint: total / K.
    pub per_unit_bits_disjoint: f64,
    /// Per-unit bits when every unit needs every expert: total.
    pub per_unit_bits_homogeneous: u64,
    /// DP-noised experts dropped for failing recertification.
    pub excluded: usize,
}

/// Full fleet run result.
#[derive(Debug)]
pub struct FleetRun {
    pub metrics: Vec<DayMetrics>,
    pub deltas: Vec<OtaDelta>,
    /// The exact interleaved query order, for replay checks.
    pub trace: Vec<Sequence>,
    pub system: LawsSystem,
}

/// Run the fleet: each day, each task slot cycles through units 0..K−1,
/// every query flowing through the shared system.
pub fn run_fleet(
    model: TransformerModel<f64>,
    engine: EngineConfig,
    fleet: &FleetConfig,
) -> Result<FleetRun> {
    fleet.validate()?;
    let vocab = model.vocab();
    let mut sys = LawsSystem::new(model, engine)?;
    let mut sources: Vec<Source> = (0..fleet.units)
        .map(|u| Source::new(fleet.source.clone(), fleet.seed.wrapping_add(u as u64)))
        .collect::<Result<_>>()?;

    let mut metrics = Vec::with_capacity(fleet.days);
    let mut deltas = Vec::with_capacity(fleet.days);
    let mut trace = Vec::with_capacity(fleet.days * fleet.tasks_per_day * fleet.units);
    let mut dp_rng = ChaCha8Rng::seed_from_u64(fleet.seed ^ 0xD9);
    let mut shipped_until = 0usize;

    for day in 0..fleet.days as u32 {
        sys.current_day = day;
        let (h0, m0) = (sys.counters.hits, sys.counters.misses);
        for _task in 0..fleet.tasks_per_day {
            for src in sources.iter_mut() {
                let x = sample_with_vocab(src, vocab);
                sys.infer(&x)?;
                trace.push(x);
            }
        }
        let day_hits = sys.counters.hits - h0;
        let day_misses = sys.counters.misses - m0;

        // Ship everything created this period.
        let created: Vec<Expert> = sys.library.iter().skip(shipped_until).cloned().collect();
        shipped_until = sys.library.len();
        let delta = build_delta(day, created, fleet.units, fleet.dp, &sys, &mut dp_rng)?;

        metrics.push(DayMetrics {
            day,
            hits: day_hits,
            misses: day_misses,
            hit_rate: day_hits as f64 / (day_hits + day_misses).max(1) as f64,
            library_size: sys.library.len(),
            delta_bits: delta.total_bits,
            delta_experts: delta.records.len(),
        });
        deltas.push(delta);
    }

    Ok(FleetRun {
        metrics,
        deltas,
        trace,
        system: sys,
    })
}

fn build_delta(
    period: u32,
    created: Vec<Expert>,
    units: usize,
    dp: Option<DpParams>,
    sys: &LawsSystem,
    rng: &mut ChaCha8Rng,
) -> Result<OtaDelta> {
    let mut records = Vec::with_capacity(created.len());
    let mut excluded = 0usize;
    for e in created {
        match dp {
            None => records.push(e),
            Some(p) => {
                let noised = dp_noise(&e, &sys.model, sys.delta, sys.lambda, sys.c_e, p, rng)?;
                if noised.certified {
                    records.push(noised.expert);
                } else {
                    excluded += 1;
                }
            }
        }
    }
    let bytes = expert::serialize_records(records.iter());
    let total_bits = 8 * bytes.len() as u64;
    Ok(OtaDelta {
        period,
        records,
        bytes,
        total_bits,
        per_unit_bits_disjoint: total_bits as f64 / units as f64,
        per_unit_bits_homogeneous: total_bits,
        excluded,
    })
}

/// First day (1-based) whose daily hit rate reaches the target.
pub fn days_to_hit_rate(metrics: &[DayMetrics], target: f64) -> Option<u32> {
    metrics.iter().find(|m| m.hit_rate >= target).map(|m| m.day + 1)
}

/// Closed-form period bound: `2^H · log2(ΔN) · B_expert` bits.
pub fn ota_formula_bits(h_bits: f64, delta_n: f64, b_expert_bits: f64) -> f64 {
    h_bits.exp2() * delta_n.log2() * b_expert_bits
}

/// Gaussian mechanism scale with the description length taken in decimal
/// gigabytes: `σ = sqrt(2·B_GB·ln(1.25/δ)) / ε`.
pub fn dp_sigma(b_bytes: f64, eps_dp: f64, delta_dp: f64) -> f64 {
    (2.0 * (b_bytes / 1e9) * (1.25 / delta_dp).ln()).sqrt() / eps_dp
}

/// A DP-noised expert with its refreshed certification state.
#[derive(Debug, Clone)]
pub struct NoisedExpert {
    pub expert: Expert,
    pub sigma: f64,
    pub certified: bool,
}

/// Add per-parameter Gaussian noise to the payload, re-measure the fitting
/// error at the signpost, and re-check certification. Uncertified results
/// are flagged so the caller can exclude them from the shipped delta.
pub fn dp_noise(
    expert: &Expert,
    model: &TransformerModel<f64>,
    delta: f64,
    lambda: f64,
    c_e: f64,
    params: DpParams,
    rng: &mut ChaCha8Rng,
) -> Result<NoisedExpert> {
    let bits = expert::description_length(expert);
    let sigma = dp_sigma(bits as f64 / 8.0, params.epsilon, params.delta);
    let mut noised = expert.clone();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in payload_params_mut(&mut noised.payload) {
            *v += normal.sample(rng);
        }
    }
    // Refreshed fitting error at the signpost.
    let truth = model.forward(&noised.signpost)?;
    let (mine, _) = evaluate(&noised, &noised.signpost, model)?;
    noised.fit_error = linalg::norm2(&linalg::sub(&truth, &mine));
    noised.tau = expert::routing_radius(delta, noised.fit_error, lambda, c_e)?;
    let cert = certify(&noised, delta, lambda, c_e);
    noised.certified = cert.certified;
    Ok(NoisedExpert {
        expert: noised,
        sigma,
        certified: cert.certified,
    })
}

fn payload_params_mut(payload: &mut Payload) -> Vec<&mut f64> {
    match payload {
        Payload::Constant { output } => output.iter_mut().collect(),
        Payload::Linear { base, jacobian } => base
            .iter_mut()
            .chain(jacobian.data_mut().iter_mut())
            .collect(),
        Payload::Lookup { entries } => entries
            .iter_mut()
            .flat_map(|(_, out)| out.iter_mut())
            .collect(),
        Payload::Affine { weights, bias } => weights
            .data_mut()
            .iter_mut()
            .chain(bias.iter_mut())
            .collect(),
        Payload::Template { base, scale, .. } => {
            let mut v: Vec<&mut f64> = base.iter_mut().collect();
            v.push(scale);
            v
        }
        Payload::SmallMlp(mlp) => mlp
            .layers
            .iter_mut()
            .flat_map(|(w, b)| w.data_mut().iter_mut().chain(b.iter_mut()))
            .collect(),
    }
}
