use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::EnvSpec;
use crate::error::{config_err, Result};
use crate::trainer::{HyperParams, NetSizes};
use crate::vfn::AgentVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate every this many training steps (plus step 0 and the end).
    pub every: u64,
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            every: 2000,
            episodes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub env: EnvSpec,
    pub variant: AgentVariant,
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default)]
    pub nets: NetSizes,
    pub seeds: Vec<u64>,
    pub train_steps: u64,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Not part of the hash: moving outputs does not change the experiment.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub checkpoint: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn new(name: impl Into<String>, env: EnvSpec, variant: AgentVariant, seeds: Vec<u64>, train_steps: u64) -> Self {
        Self {
            name: name.into(),
            env,
            variant,
            hyper: HyperParams::default(),
            nets: NetSizes::default(),
            seeds,
            train_steps,
            eval: EvalConfig::default(),
            output_dir: default_output_dir(),
            checkpoint: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(config_err(format!("run name `{}` must be non-empty without path separators", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(config_err("at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(config_err("seeds must be distinct"));
        }
        if self.eval.every == 0 || self.eval.episodes == 0 {
            return Err(config_err("evaluation cadence and episode count must be positive"));
        }
        self.hyper.validate()?;
        self.env.build()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical (key-sorted,
    /// compact) JSON, with `output_dir` removed.
    pub fn hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
        }
        let digest = Sha256::digest(serde_json::to_string(&value)?.as_bytes());
        Ok(hex::encode(digest)[..16].to_string())
    }

    pub fn run_id(&self) -> Result<String> {
        Ok(format!("{}-{}", self.name, self.hash()?))
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(self.output_dir.join(self.run_id()?))
    }

    pub fn seed_dir(&self, seed: u64) -> Result<PathBuf> {
        Ok(self.run_dir()?.join(format!("seed-{seed}")))
    }
}
