//! Experiment configuration: one JSON document, every field optional, with
//! defaults matching the reference physical and sampling settings.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::deeponet::{AdamConfig, ArchSpec, LossWeights};
use crate::error::{Error, Result};
use crate::fem_transport::{default_dt, uniform_save_times, TransportConfig};
use crate::mesh::SizeFieldParams;
use crate::physics::{PhysParams, SourceSamplerConfig};
use crate::sampling::SamplingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub branch_width: usize,
    pub branch_depth: usize,
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub q: usize,
    pub output_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            branch_width: 128,
            branch_depth: 4,
            trunk_width: 128,
            trunk_depth: 4,
            q: 128,
            output_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, m: usize) -> ArchSpec {
        ArchSpec {
            m,
            branch_width: self.branch_width,
            branch_depth: self.branch_depth,
            trunk_width: self.trunk_width,
            trunk_depth: self.trunk_depth,
            q: self.q,
        }
    }
}

/// How each training step assembles its collocation batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Every point of each sampled instance.
    Instances,
    /// `points_per_instance` random points of each kind per sampled instance.
    Points,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub decay_steps: u64,
    pub decay_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub batch_mode: BatchMode,
    pub points_per_instance: usize,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            decay_steps: adam.decay_steps,
            decay_rate: adam.decay_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            iterations: 300_000,
            batch_size: 200,
            batch_mode: BatchMode::Instances,
            points_per_instance: 1,
            log_every: 100,
            checkpoint_every: 10_000,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            decay_steps: self.decay_steps,
            decay_rate: self.decay_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSection {
    /// Defaults to 1 s for T <= 50 and 5 s otherwise.
    pub dt: Option<f64>,
    /// Defaults to ten uniform times in (0, T].
    pub save_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Grid points per axis.
    pub k: usize,
    /// Uniform evaluation times in (0, T].
    pub n_t: usize,
    pub n_test: usize,
    pub bench_repetitions: usize,
    pub ablation_seeds: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            k: 80,
            n_t: 10,
            n_test: 30,
            bench_repetitions: 3,
            ablation_seeds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub physics: PhysParams,
    pub sources: SourceSamplerConfig,
    pub mesh: SizeFieldParams,
    pub sampling: SamplingConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub loss: LossWeights,
    pub transport: TransportSection,
    pub evaluation: EvaluationConfig,
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn arch(&self) -> ArchSpec {
        self.model.arch(self.sampling.m)
    }

    pub fn transport_config(&self) -> TransportConfig {
        let t = self.physics.final_time;
        TransportConfig {
            dt: self.transport.dt.unwrap_or_else(|| default_dt(t)),
            final_time: t,
            save_times: self
                .transport
                .save_times
                .clone()
                .unwrap_or_else(|| uniform_save_times(t, crate::fem_transport::DEFAULT_SNAPSHOTS)),
        }
    }

    /// Transport settings for evaluation: `n_t` uniform snapshots.
    pub fn eval_transport_config(&self) -> TransportConfig {
        let t = self.physics.final_time;
        TransportConfig {
            dt: self.transport.dt.unwrap_or_else(|| default_dt(t)),
            final_time: t,
            save_times: uniform_save_times(t, self.evaluation.n_t),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = self.physics.violations();
        out.extend(self.sources.violations(&self.physics));
        out.extend(self.mesh.violations());
        out.extend(self.sampling.violations());
        out.extend(self.arch().violations());
        if !(self.model.output_scale > 0.0 && self.model.output_scale.is_finite()) {
            out.push(format!("model.output_scale must be positive (got {})", self.model.output_scale));
        }
        out.extend(self.optimizer.adam().violations());
        let o = &self.optimizer;
        if o.batch_size == 0 {
            out.push("optimizer.batch_size must be positive".into());
        }
        if o.batch_mode == BatchMode::Points && o.points_per_instance == 0 {
            out.push("optimizer.points_per_instance must be positive".into());
        }
        if o.log_every == 0 {
            out.push("optimizer.log_every must be positive".into());
        }
        if o.checkpoint_every == 0 {
            out.push("optimizer.checkpoint_every must be positive".into());
        }
        out.extend(self.loss.violations());
        if self.physics.violations().is_empty() {
            out.extend(self.transport_config().violations());
            if self.transport.save_times.is_none() || self.evaluation.n_t != 10 {
                out.extend(
                    self.eval_transport_config()
                        .violations()
                        .into_iter()
                        .map(|m| m.replace("transport.save_times", "evaluation.n_t")),
                );
            }
        }
        let e = &self.evaluation;
        for (name, v) in [
            ("k", e.k),
            ("n_t", e.n_t),
            ("n_test", e.n_test),
            ("bench_repetitions", e.bench_repetitions),
            ("ablation_seeds", e.ablation_seeds),
        ] {
            if v == 0 {
                out.push(format!("evaluation.{name} must be positive"));
            }
        }
        if e.k == 1 {
            out.push("evaluation.k must be at least 2".into());
        }
        if self.threads == Some(0) {
            out.push("threads must be positive".into());
        }
        out
    }

    /// SHA-256 of the canonical JSON form, ignoring the thread count.
    pub fn hash(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.threads = None;
        let bytes = serde_json::to_vec(&to_sorted_value(&c)).expect("config serializes");
        Sha256::digest(&bytes).into()
    }

    /// Key-sorted pretty JSON with every default filled in.
    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(&to_sorted_value(self)).expect("config serializes")
    }
}

fn to_sorted_value<T: Serialize>(v: &T) -> Value {
    // serde_json's default map is ordered by key.
    serde_json::to_value(v).expect("config serializes")
}

/// 1-based line of the first occurrence of `"key"` at or after the section
/// key `"section"` (when given).
fn key_line(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let start = match section {
        Some(s) => text.find(&format!("\"{s}\""))?,
        None => 0,
    };
    let pos = start + text[start..].find(&format!("\"{key}\""))?;
    Some(text[..pos].matches('\n').count() + 1)
}

fn located(text: &str, message: String) -> String {
    // Messages start with "section.field" or "field".
    let head = message.split_whitespace().next().unwrap_or("");
    let head = head.trim_end_matches(':');
    let mut parts = head.split('.');
    let first = parts.next().unwrap_or("");
    let line = match parts.next() {
        Some(field) => key_line(text, Some(first), field).or_else(|| key_line(text, None, first)),
        None => key_line(text, None, first),
    };
    match line {
        Some(l) => format!("line {l}: {message}"),
        None => message,
    }
}

const SECTIONS: [&str; 11] = [
    "physics",
    "sources",
    "mesh",
    "sampling",
    "model",
    "optimizer",
    "loss",
    "transport",
    "evaluation",
    "seed",
    "threads",
];

fn section<T: DeserializeOwned + Default>(
    doc: &serde_json::Map<String, Value>,
    name: &str,
    text: &str,
    errors: &mut Vec<String>,
) -> T {
    match doc.get(name) {
        None => T::default(),
        Some(v) => serde_json::from_value(v.clone()).unwrap_or_else(|e| {
            let line = key_line(text, None, name).map_or(String::new(), |l| format!("line {l}: "));
            errors.push(format!("{line}{name}: {e}"));
            T::default()
        }),
    }
}

/// Parses and validates a configuration document, reporting every problem
/// found rather than only the first.
pub fn validate_config(text: &str) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::Config(vec![format!("line {} column {}: {e}", e.line(), e.column())]))?;
    let Value::Object(doc) = value else {
        return Err(Error::Config(vec!["the configuration must be a JSON object".into()]));
    };
    let mut errors = Vec::new();
    for key in doc.keys() {
        if !SECTIONS.contains(&key.as_str()) {
            let line = key_line(text, None, key).map_or(String::new(), |l| format!("line {l}: "));
            errors.push(format!("{line}unknown section `{key}`"));
        }
    }
    let cfg = ExperimentConfig {
        physics: section(&doc, "physics", text, &mut errors),
        sources: section(&doc, "sources", text, &mut errors),
        mesh: section(&doc, "mesh", text, &mut errors),
        sampling: section(&doc, "sampling", text, &mut errors),
        model: section(&doc, "model", text, &mut errors),
        optimizer: section(&doc, "optimizer", text, &mut errors),
        loss: section(&doc, "loss", text, &mut errors),
        transport: section(&doc, "transport", text, &mut errors),
        evaluation: section(&doc, "evaluation", text, &mut errors),
        seed: section(&doc, "seed", text, &mut errors),
        threads: section(&doc, "threads", text, &mut errors),
    };
    errors.extend(cfg.violations().into_iter().map(|m| located(text, m)));
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errors))
    }
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![format!("cannot read config file {}: {e}", path.display())]))?;
    validate_config(&text)
}
