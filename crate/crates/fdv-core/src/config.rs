//! The run configuration file: one schema-versioned TOML document holding
//! every tunable of the pipeline (preprocessing geometry, model
//! architecture, training, classifier, and protocol counts). Unknown keys
//! are rejected so a typo in a hyperparameter name cannot silently fall
//! back to a default.

use crate::dataset::ProtocolConfig;
use crate::error::{Error, Result};
use crate::preprocess::PreprocessConfig;
use crate::svm::SvmConfig;
use crate::trainer::TrainConfig;
use crate::vae::VaeConfig;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// Feature-model architecture; the input dimension is derived from the
/// preprocessing geometry, so it is not an independent knob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeSection {
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub kl_weight: f64,
}

impl Default for VaeSection {
    fn default() -> Self {
        VaeSection { hidden_dims: vec![256, 128], latent_dim: 16, kl_weight: 1.0 }
    }
}

/// Parsed run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Master seed; every random stream in a run derives from it. May be
    /// overridden by the FDV_SEED environment variable or a CLI flag.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub vae: VaeSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub svm: SvmConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            preprocess: PreprocessConfig::default(),
            vae: VaeSection::default(),
            train: TrainConfig::default(),
            svm: SvmConfig::default(),
            protocol: ProtocolConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.vae_config().validate()?;
        self.train.validate()?;
        self.svm.validate()?;
        self.protocol.validate()?;
        Ok(())
    }

    /// Concrete model configuration: input dimension is the preprocessed
    /// pixel count.
    pub fn vae_config(&self) -> VaeConfig {
        let mut cfg = VaeConfig::new(
            self.preprocess.side_h * self.preprocess.side_w,
            self.vae.hidden_dims.clone(),
            self.vae.latent_dim,
        );
        cfg.kl_weight = self.vae.kl_weight;
        cfg
    }

    /// Training configuration with the resolved run seed filled in.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }
}

/// Where the effective seed came from, for logging into outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    CliFlag,
    EnvVar,
    Config,
}

/// Resolve the effective seed: an explicit CLI flag wins, then the FDV_SEED
/// environment variable, then the config file.
pub fn resolve_seed(
    cli: Option<u64>,
    env_var: Option<&str>,
    config_seed: u64,
) -> Result<(u64, SeedSource)> {
    if let Some(s) = cli {
        return Ok((s, SeedSource::CliFlag));
    }
    if let Some(text) = env_var {
        let parsed = text.trim().parse::<u64>().map_err(|_| {
            Error::Usage(format!("FDV_SEED must be an unsigned integer, got {text:?}"))
        })?;
        return Ok((parsed, SeedSource::EnvVar));
    }
    Ok((config_seed, SeedSource::Config))
}
