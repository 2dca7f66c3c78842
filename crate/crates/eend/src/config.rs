//! Run configuration: a TOML file with one table per pipeline stage.
//!
//! Every key has a default, unknown keys are rejected, and any value can be
//! overridden with `section.key=value`.

use std::path::{Path, PathBuf};

use eend_core::features::{FeatureConfig, LabelSubsampling};
use eend_core::simulator::{NoiseSource, SimSpec};
use eend_core::training::AdamConfig;
use eend_core::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; mixture `i` and training draw from streams of it.
    pub seed: u64,
    pub sim: SimSection,
    pub features: FeatureSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub adapt: AdaptSection,
    pub post: PostSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Silent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub n_mixtures: usize,
    pub n_spk: usize,
    pub n_umin: usize,
    pub n_umax: usize,
    pub beta: f64,
    pub snr_choices: Vec<f64>,
    pub n_rirs: usize,
    pub rir_seed: u64,
    pub utt_min_s: f64,
    pub utt_max_s: f64,
    pub noise: NoiseKind,
    pub noise_duration_s: f64,
    /// Size of the speaker pool mixtures draw from.
    pub n_speaker_pool: usize,
    /// Seed of the speaker pool; a different seed gives unseen speakers.
    pub speaker_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Keep,
    Maxpool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    pub context: usize,
    pub subsampling: usize,
    pub label_subsampling: LabelMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_blocks: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_speakers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub base_scale: f64,
    pub chunk_len: usize,
    pub average_last: usize,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
    /// Write `checkpoints/epoch_XXXX.ckpt` every this many epochs; 0 writes
    /// only the final and averaged checkpoints.
    pub checkpoint_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptSection {
    pub lr: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostSection {
    pub threshold: f64,
    pub median_window: usize,
    pub collar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Dataset directory read by `train` and `adapt`.
    pub data: PathBuf,
    /// Experiment directory for checkpoints and logs.
    pub exp: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            sim: SimSection::default(),
            features: FeatureSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            adapt: AdaptSection::default(),
            post: PostSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl Default for SimSection {
    /// Desk scale: 20 mixtures of roughly 20 s.
    fn default() -> Self {
        let spec = SimSpec::default();
        Self {
            n_mixtures: 20,
            n_spk: spec.n_spk,
            n_umin: 3,
            n_umax: 5,
            beta: spec.beta,
            snr_choices: spec.snr_choices,
            n_rirs: spec.n_rirs,
            rir_seed: spec.rir_seed,
            utt_min_s: spec.utt_dur_range.0,
            utt_max_s: spec.utt_dur_range.1,
            noise: NoiseKind::White,
            noise_duration_s: 5.0,
            n_speaker_pool: 100,
            speaker_seed: 1,
        }
    }
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            context: 7,
            subsampling: 10,
            label_subsampling: LabelMode::Keep,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            n_blocks: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            n_speakers: 2,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 100,
            batch_size: 4,
            warmup_steps: 500,
            base_scale: 1.0,
            chunk_len: 500,
            average_last: 10,
            grad_clip: 0.0,
            checkpoint_every: 1,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
        }
    }
}

impl Default for AdaptSection {
    fn default() -> Self {
        Self { lr: 1e-5, epochs: 100 }
    }
}

impl Default for PostSection {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            median_window: 11,
            collar: 0.25,
        }
    }
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data/train"),
            exp: PathBuf::from("exp"),
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut table = root;
    for part in parents {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: {part} is not a section")))?;
    }
    let mut value = parse_value(raw.trim());
    // Integers are accepted where floats are expected.
    if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (table.get(*last), &value) {
        value = toml::Value::Float(*i as f64);
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Defaults, then the optional file, then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root = toml::Table::try_from(RunConfig::default())
            .map_err(|e| CliError::Config(format!("serializing defaults: {e}")))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => CliError::Config(format!("{}: file not found", path.display())),
                _ => CliError::io(path)(e),
            })?;
            let user: toml::Table = text
                .parse()
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut root, user);
        }
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let core = |r: eend_core::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        core(self.sim_spec().validate())?;
        core(self.feature_config().logmel.validate())?;
        core(self.model_config(1).validate())?;
        core(self.train_config().validate())?;
        let p = &self.post;
        if !(p.threshold > 0.0 && p.threshold < 1.0) {
            return Err(CliError::Config(format!("post.threshold must lie in (0, 1), got {}", p.threshold)));
        }
        if p.median_window % 2 == 0 {
            return Err(CliError::Config(format!("post.median_window must be odd, got {}", p.median_window)));
        }
        if !(p.collar >= 0.0) {
            return Err(CliError::Config(format!("post.collar must be >= 0, got {}", p.collar)));
        }
        if self.features.subsampling == 0 {
            return Err(CliError::Config("features.subsampling must be >= 1".into()));
        }
        if self.sim.n_speaker_pool < self.sim.n_spk {
            return Err(CliError::Config(format!(
                "sim.n_speaker_pool ({}) is smaller than sim.n_spk ({})",
                self.sim.n_speaker_pool, self.sim.n_spk
            )));
        }
        if !(self.adapt.lr >= 0.0) {
            return Err(CliError::Config(format!("adapt.lr must be >= 0, got {}", self.adapt.lr)));
        }
        Ok(())
    }

    pub fn sim_spec(&self) -> SimSpec {
        let s = &self.sim;
        SimSpec {
            n_spk: s.n_spk,
            n_umin: s.n_umin,
            n_umax: s.n_umax,
            beta: s.beta,
            snr_choices: s.snr_choices.clone(),
            n_rirs: s.n_rirs,
            rir_seed: s.rir_seed,
            sample_rate: 8000,
            utt_dur_range: (s.utt_min_s, s.utt_max_s),
        }
    }

    pub fn noise_source(&self) -> NoiseSource {
        match self.sim.noise {
            NoiseKind::White => NoiseSource::White {
                duration_s: self.sim.noise_duration_s,
            },
            NoiseKind::Silent => NoiseSource::Silent,
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            context: self.features.context,
            subsampling: self.features.subsampling,
            label_subsampling: match self.features.label_subsampling {
                LabelMode::Keep => LabelSubsampling::KeepFrame,
                LabelMode::Maxpool => LabelSubsampling::MaxPool,
            },
            ..FeatureConfig::default()
        }
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            n_blocks: m.n_blocks,
            d_model: m.d_model,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            n_speakers: m.n_speakers,
            input_dim,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            epochs: t.epochs,
            warmup_steps: t.warmup_steps,
            base_scale: t.base_scale,
            adam: AdamConfig {
                beta1: t.adam_beta1,
                beta2: t.adam_beta2,
                eps: t.adam_eps,
            },
            chunk_len: t.chunk_len,
            average_last: t.average_last,
            seed: self.seed,
            grad_clip: (t.grad_clip > 0.0).then_some(t.grad_clip),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (slot, v) => {
                let v = match (slot.as_deref(), v) {
                    (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                    (_, v) => v,
                };
                base.insert(k, v);
            }
        }
    }
}
