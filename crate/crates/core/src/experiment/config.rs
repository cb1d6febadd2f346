use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::language::{PromptContext, Vocabulary};
use crate::policy::PolicyDims;
use crate::ppo::{sha256_hex, TrainerConfig};
use crate::reward::RewardConfig;
use crate::sim::{build_topology, DemandConfig, DemandProfile, Preset, Topology, TopologyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    #[default]
    Policy,
    Fixed,
    MaxPressure,
    Random,
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "policy" => Ok(ControllerKind::Policy),
            "fixed" => Ok(ControllerKind::Fixed),
            "maxpressure" => Ok(ControllerKind::MaxPressure),
            "random" => Ok(ControllerKind::Random),
            other => Err(Error::Config(format!(
                "controller must be one of policy, fixed, maxpressure, random; got {other:?}"
            ))),
        }
    }
}

/// Shape and decoding settings of the token policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed: usize,
    pub hidden: usize,
    pub history: usize,
    /// Filler words in the vocabulary.
    pub filler: usize,
    /// Maximum response length.
    pub max_len: usize,
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed: 16,
            hidden: 64,
            history: 4,
            filler: 16,
            max_len: 32,
            temperature: 1.0,
        }
    }
}

/// A complete run description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: Option<u64>,
    pub episodes: usize,
    pub controller: ControllerKind,
    /// Phase duration of the fixed-time controller.
    pub t_fixed: f64,
    pub out_dir: Option<PathBuf>,
    pub topology: TopologyConfig,
    pub demand: DemandConfig,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    pub reward: RewardConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "run".into(),
            seed: None,
            episodes: 1,
            controller: ControllerKind::Policy,
            t_fixed: 10.0,
            out_dir: None,
            topology: TopologyConfig::preset(Preset::Toy8),
            demand: DemandConfig::default(),
            model: ModelConfig::default(),
            trainer: TrainerConfig::default(),
            reward: RewardConfig::default(),
        }
    }
}

/// Everything derived from a validated config.
#[derive(Debug, Clone)]
pub struct Environment {
    pub topology: Topology,
    pub demand: DemandProfile,
    pub vocab: Vocabulary,
    pub dims: PolicyDims,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("seed is not set; every run must be seeded".into()))
    }

    /// Validates every section and builds the environment. Returns soft
    /// warnings alongside.
    pub fn environment(&self) -> Result<(Environment, Vec<String>)> {
        self.seed()?;
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be >= 1".into()));
        }
        if !(self.t_fixed > 0.0) {
            return Err(Error::Config(format!("t_fixed must be > 0, got {}", self.t_fixed)));
        }
        let m = &self.model;
        if m.max_len == 0 || m.embed == 0 || m.hidden == 0 || m.history == 0 {
            return Err(Error::Config(
                "model.max_len, embed, hidden and history must be >= 1".into(),
            ));
        }
        if !(m.temperature > 0.0) {
            return Err(Error::Config(format!(
                "model.temperature must be > 0, got {}",
                m.temperature
            )));
        }
        self.reward.validate()?;
        let topology = build_topology(&self.topology)?;
        let demand = self.demand.build(&topology)?;
        let warnings = self.trainer.validate(topology.num_phases())?;
        let vocab = Vocabulary::new(&topology, m.filler);
        let dims = PolicyDims {
            vocab: vocab.size(),
            feature_len: PromptContext::feature_len(topology.num_phases()),
            embed: m.embed,
            hidden: m.hidden,
            history: m.history,
        };
        Ok((
            Environment {
                topology,
                demand,
                vocab,
                dims,
            },
            warnings,
        ))
    }

    /// Hash of the settings that define an experiment, excluding the seed,
    /// episode count and output location.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.seed = None;
        c.out_dir = None;
        c.episodes = 0;
        c.trainer.seed = 0;
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }

    /// Same topology and demand.
    pub fn same_environment(&self, other: &ExperimentConfig) -> bool {
        self.topology == other.topology && self.demand == other.demand
    }
}

/// SplitMix64 finalizer, used to derive independent seeds from one.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
