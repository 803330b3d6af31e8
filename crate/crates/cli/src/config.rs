//! Experiment configuration: one TOML document with a section per module.

use std::path::{Path, PathBuf};

use mosaic_core::policy::adapt::{AdaptConfig, ImitationConfig};
use mosaic_core::policy::ppo::TrainConfig;
use mosaic_core::teleop::{ChannelConfig, ChannelPreset, ReceiverConfig};
use serde::{Deserialize, Serialize};

/// A rejected configuration value, with its dotted path.
#[derive(Debug, thiserror::Error, PartialEq)]
#[error("config error at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub stages: Vec<ChannelConfig>,
    pub receiver: ReceiverConfig,
    /// Packets streamed when measuring delay.
    pub packets: usize,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { stages: ChannelPreset::Vr.stages(), receiver: ReceiverConfig::default(), packets: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    /// Keep domain randomization and pushes on during evaluation.
    pub randomize: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes: 16, randomize: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub draws: usize,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self { draws: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FldSection {
    pub harmonics: usize,
    pub components: usize,
    /// Frames per fitted segment.
    pub segment_frames: usize,
    /// Length of each generated clip (s).
    pub clip_seconds: f64,
}

impl Default for FldSection {
    fn default() -> Self {
        Self { harmonics: 4, components: 2, segment_frames: 91, clip_seconds: 10.0 }
    }
}

/// Which trainer builds a tracking policy from a bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    /// PPO on the tracking reward.
    #[default]
    Ppo,
    /// Supervised imitation of the privileged expert.
    Clone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub bank: Option<PathBuf>,
    pub adapt_data: Option<PathBuf>,
    pub rewards: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub method: TrainMethod,
    pub train: TrainConfig,
    pub imitation: ImitationConfig,
    pub adapt: AdaptConfig,
    pub channel: ChannelSection,
    pub eval: EvalSection,
    pub stats: StatsSection,
    pub fld: FldSection,
}

/// Deserializes TOML, reporting the dotted path of the first bad key.
pub fn parse_toml<T: serde::de::DeserializeOwned>(src: &str) -> Result<T, ConfigError> {
    let de = toml::Deserializer::parse(src).map_err(|e| ConfigError::new("<document>", e.to_string().trim()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(if path == "." { "<document>".into() } else { path }, e.inner().to_string().trim())
    })
}

pub fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|e| ConfigError::new(path.display().to_string(), e.to_string()))?;
    parse_toml(&src)
}

pub fn validate_stages(prefix: &str, stages: &[ChannelConfig]) -> Result<(), ConfigError> {
    for (i, s) in stages.iter().enumerate() {
        let at = |field: &str| format!("{prefix}[{i}].{field}");
        if !(s.base_latency >= 0.0 && s.base_latency.is_finite()) {
            return Err(ConfigError::new(at("base_latency"), "must be finite and >= 0"));
        }
        if !(s.jitter_std >= 0.0 && s.jitter_std.is_finite()) {
            return Err(ConfigError::new(at("jitter_std"), "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&s.drop_rate) {
            return Err(ConfigError::new(at("drop_rate"), format!("{} is outside [0, 1)", s.drop_rate)));
        }
    }
    Ok(())
}

fn section<E: std::fmt::Display>(path: &str, r: Result<(), E>) -> Result<(), ConfigError> {
    r.map_err(|e| ConfigError::new(path, e.to_string()))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        load_toml(path)
    }

    /// The top-level seed drives every module.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.imitation.seed = seed;
        self.adapt.budget.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, p) in [("bank", &self.bank), ("adapt_data", &self.adapt_data), ("rewards", &self.rewards)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(ConfigError::new(name, format!("{} does not exist", p.display())));
                }
            }
        }
        section("train.sampler", self.train.sampler.validate())?;
        section("train.env", self.train.env.validate())?;
        section("train.ppo", self.train.ppo.validate())?;
        if self.train.num_envs == 0 {
            return Err(ConfigError::new("train.num_envs", "must be at least 1"));
        }
        section("imitation", self.imitation.validate())?;
        section("adapt.budget", self.adapt.budget.validate())?;
        section("adapt.distill", self.adapt.distill.validate())?;
        if !(0.0..=1.0).contains(&self.adapt.adapt_fraction) {
            return Err(ConfigError::new("adapt.adapt_fraction", "must lie in [0, 1]"));
        }
        validate_stages("adapt.shift.stages", &self.adapt.shift.stages)?;
        validate_stages("channel.stages", &self.channel.stages)?;
        if !(self.channel.receiver.ema_alpha > 0.0 && self.channel.receiver.ema_alpha <= 1.0) {
            return Err(ConfigError::new("channel.receiver.ema_alpha", "must lie in (0, 1]"));
        }
        if self.channel.packets == 0 {
            return Err(ConfigError::new("channel.packets", "must be at least 1"));
        }
        if self.eval.episodes == 0 {
            return Err(ConfigError::new("eval.episodes", "must be at least 1"));
        }
        if self.stats.draws == 0 {
            return Err(ConfigError::new("stats.draws", "must be at least 1"));
        }
        if self.fld.harmonics == 0 {
            return Err(ConfigError::new("fld.harmonics", "must be at least 1"));
        }
        if self.fld.components == 0 {
            return Err(ConfigError::new("fld.components", "must be at least 1"));
        }
        if self.fld.segment_frames < 8 {
            return Err(ConfigError::new("fld.segment_frames", "must be at least 8"));
        }
        if !(self.fld.clip_seconds > 0.0) {
            return Err(ConfigError::new("fld.clip_seconds", "must be positive"));
        }
        Ok(())
    }
}
