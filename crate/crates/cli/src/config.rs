//! Experiment configuration file: flat TOML with sections mirroring the
//! library modules.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use laws_core::engine::{DeltaMode, EngineConfig, MlpFit};
use laws_core::fleet::{DpParams, FleetConfig};
use laws_core::model::{Activation, ModelConfig, TransformerModel};
use laws_core::workload::{SourceSpec, Template};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub source: SourceSection,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub fleet: FleetSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "d_layers")]
    pub layers: usize,
    #[serde(default = "d_dmodel")]
    pub d_model: usize,
    #[serde(default = "d_dhead")]
    pub d_head: usize,
    #[serde(default = "d_vocab")]
    pub vocab: u32,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_eps_ln")]
    pub eps_ln: f64,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_activation")]
    pub activation: String,
    #[serde(default = "d_nmax")]
    pub n_max: usize,
    /// Scale applied to every per-layer weight matrix after construction.
    #[serde(default = "d_one")]
    pub weight_scale: f64,
}

fn d_layers() -> usize {
    2
}
fn d_dmodel() -> usize {
    16
}
fn d_dhead() -> usize {
    8
}
fn d_vocab() -> u32 {
    32
}
fn d_hidden() -> usize {
    32
}
fn d_eps_ln() -> f64 {
    1e-5
}
fn d_seed() -> u64 {
    7
}
fn d_activation() -> String {
    "gelu".into()
}
fn d_nmax() -> usize {
    16
}
fn d_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    #[serde(default = "d_kind")]
    pub kind: String,
    #[serde(default = "d_m")]
    pub m: usize,
    #[serde(default = "d_seq_len")]
    pub seq_len: usize,
    #[serde(default = "d_s")]
    pub s: f64,
    #[serde(default)]
    pub templates: Vec<TemplateSection>,
}

fn d_kind() -> String {
    "uniform".into()
}
fn d_m() -> usize {
    64
}
fn d_seq_len() -> usize {
    1
}
fn d_s() -> f64 {
    1.5
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection {
            kind: d_kind(),
            m: d_m(),
            seq_len: d_seq_len(),
            s: d_s(),
            templates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSection {
    pub skeleton: Vec<u32>,
    pub slots: Vec<usize>,
    pub alphabet: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    #[serde(default = "d_nmin")]
    pub n_min: u64,
    #[serde(default = "d_smax")]
    pub s_max: usize,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "d_audit")]
    pub audit_rate: f64,
    #[serde(default = "d_eps_target")]
    pub epsilon_target: f64,
    /// "auto" derives δ from the certificate; "fixed" uses delta_value.
    #[serde(default = "d_delta_mode")]
    pub delta_mode: String,
    #[serde(default = "d_tau_target")]
    pub tau_target_bits: f64,
    #[serde(default)]
    pub delta_value: f64,
    #[serde(default = "d_queries")]
    pub queries: u64,
    #[serde(default = "d_h_thresh")]
    pub h_thresh: f64,
}

fn d_nmin() -> u64 {
    8
}
fn d_smax() -> usize {
    64
}
fn d_audit() -> f64 {
    0.01
}
fn d_eps_target() -> f64 {
    1e-3
}
fn d_delta_mode() -> String {
    "auto".into()
}
fn d_tau_target() -> f64 {
    4.0
}
fn d_queries() -> u64 {
    10_000
}
fn d_h_thresh() -> f64 {
    1.0
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            n_min: d_nmin(),
            s_max: d_smax(),
            alpha: 0.0,
            audit_rate: d_audit(),
            epsilon_target: d_eps_target(),
            delta_mode: d_delta_mode(),
            tau_target_bits: d_tau_target(),
            delta_value: 0.0,
            queries: d_queries(),
            h_thresh: d_h_thresh(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSection {
    #[serde(default = "d_units")]
    pub units: usize,
    #[serde(default = "d_tasks")]
    pub tasks_per_day: usize,
    #[serde(default = "d_days")]
    pub days: usize,
    #[serde(default)]
    pub dp_epsilon: Option<f64>,
    #[serde(default)]
    pub dp_delta: Option<f64>,
}

fn d_units() -> usize {
    1
}
fn d_tasks() -> usize {
    100
}
fn d_days() -> usize {
    10
}

impl Default for FleetSection {
    fn default() -> Self {
        FleetSection {
            units: d_units(),
            tasks_per_day: d_tasks(),
            days: d_days(),
            dp_epsilon: None,
            dp_delta: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    #[serde(default)]
    pub analyzers: Vec<String>,
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.source.kind.as_str() {
            "uniform" | "zipf" | "template" => {}
            other => bail!("unknown source kind {other:?}"),
        }
        match self.engine.delta_mode.as_str() {
            "auto" => {}
            "fixed" => {
                if !(self.engine.delta_value > 0.0) {
                    bail!("fixed delta mode needs delta_value > 0");
                }
            }
            other => bail!("unknown delta mode {other:?}"),
        }
        match self.model.activation.as_str() {
            "gelu" | "relu" => {}
            other => bail!("unknown activation {other:?}"),
        }
        self.source_spec()?.validate()?;
        Ok(())
    }

    pub fn build_model(&self) -> Result<TransformerModel<f64>> {
        let m = &self.model;
        let activation = match m.activation.as_str() {
            "relu" => Activation::Relu,
            _ => Activation::Gelu,
        };
        let cfg = ModelConfig {
            layers: m.layers,
            d_model: m.d_model,
            d_head: m.d_head,
            vocab: m.vocab,
            hidden: m.hidden,
            eps_ln: m.eps_ln,
            seed: m.seed,
            activation,
            n_max: m.n_max,
            ..ModelConfig::default()
        };
        let mut model = TransformerModel::new(cfg)?;
        if m.weight_scale != 1.0 {
            for layer in &mut model.layers {
                layer.w_q.scale(m.weight_scale);
                layer.w_k.scale(m.weight_scale);
                layer.w_v.scale(m.weight_scale);
                layer.w_o.scale(m.weight_scale);
                layer.w_mlp_in.scale(m.weight_scale);
                layer.w_mlp_out.scale(m.weight_scale);
            }
        }
        Ok(model)
    }

    pub fn source_spec(&self) -> Result<SourceSpec> {
        Ok(match self.source.kind.as_str() {
            "zipf" => SourceSpec::Zipf {
                m: self.source.m,
                s: self.source.s,
                seq_len: self.source.seq_len,
            },
            "template" => SourceSpec::Template {
                templates: self
                    .source
                    .templates
                    .iter()
                    .map(|t| Template {
                        skeleton: t.skeleton.clone(),
                        slots: t.slots.clone(),
                        alphabet: t.alphabet.clone(),
                    })
                    .collect(),
            },
            _ => SourceSpec::Uniform {
                m: self.source.m,
                seq_len: self.source.seq_len,
            },
        })
    }

    pub fn engine_config(&self) -> EngineConfig {
        let e = &self.engine;
        EngineConfig {
            delta: if e.delta_mode == "fixed" {
                DeltaMode::Fixed(e.delta_value)
            } else {
                DeltaMode::Auto {
                    epsilon_target: e.epsilon_target,
                    tau_target_bits: e.tau_target_bits,
                }
            },
            n_min: e.n_min,
            s_max: e.s_max,
            alpha: e.alpha,
            audit_rate: e.audit_rate,
            epsilon_target: e.epsilon_target,
            seed: self.model.seed,
            mlp: MlpFit::default(),
            h_thresh: e.h_thresh,
        }
    }

    pub fn fleet_config(&self) -> Result<FleetConfig> {
        let dp = match (self.fleet.dp_epsilon, self.fleet.dp_delta) {
            (Some(epsilon), Some(delta)) => Some(DpParams { epsilon, delta }),
            (None, None) => None,
            _ => bail!("differential privacy needs both dp_epsilon and dp_delta"),
        };
        Ok(FleetConfig {
            units: self.fleet.units,
            tasks_per_day: self.fleet.tasks_per_day,
            days: self.fleet.days,
            source: self.source_spec()?,
            seed: self.model.seed,
            dp,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
