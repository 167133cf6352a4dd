//! Run configuration: one JSON document covering the world, the encoder and
//! its mechanism settings, the training loop, and retrieval evaluation.
//!
//! Missing fields fall back to the desk-scale defaults, unknown keys are
//! rejected, and everything is validated at load time. The blur kernel width
//! follows the image size unless the document pins it explicitly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stablemind_core::alignment::RetrievalConfig;
use stablemind_core::harness::{EncoderConfig, TrainConfig, WorldSpec};
use stablemind_core::image::BlurConfig;

use crate::error::{CliError, CliResult};

/// Retrieval evaluation settings. The pool defaults to the protocol's 300
/// candidates capped at the validation size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSettings {
    pub pool_size: Option<usize>,
    pub trials: usize,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        RetrievalSettings {
            pool_size: None,
            trials: 30,
        }
    }
}

impl RetrievalSettings {
    pub fn resolve(&self, val_size: usize) -> CliResult<RetrievalConfig> {
        let pool_size = match self.pool_size {
            Some(p) if p > val_size => {
                return Err(CliError::Config(format!(
                    "retrieval: pool_size {p} exceeds the validation size {val_size}"
                )));
            }
            Some(p) => p,
            None => 300.min(val_size),
        };
        if pool_size < 2 {
            return Err(CliError::Config(format!(
                "retrieval: pool_size {pool_size} below the minimum of 2"
            )));
        }
        if self.trials == 0 {
            return Err(CliError::Config("retrieval: zero trials".to_string()));
        }
        Ok(RetrievalConfig { pool_size, trials: self.trials })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldSpec,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub retrieval: RetrievalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let world = WorldSpec::default();
        RunConfig {
            encoder: EncoderConfig {
                dib: BlurConfig::desk(world.image_size),
                ..EncoderConfig::default()
            },
            world,
            train: TrainConfig::default(),
            retrieval: RetrievalSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.world.validate()?;
        self.encoder.validate()?;
        self.train.validate()?;
        self.retrieval.resolve(self.world.n_target_val)?;
        if self.encoder.dib.kernel_size / 2 >= self.world.image_size {
            return Err(CliError::Config(format!(
                "blur kernel {} does not fit {}-pixel images",
                self.encoder.dib.kernel_size, self.world.image_size
            )));
        }
        Ok(())
    }

    /// Retrieval settings resolved against the shared validation size.
    pub fn retrieval_config(&self) -> CliResult<RetrievalConfig> {
        self.retrieval.resolve(self.world.n_target_val)
    }
}

/// Loads, normalizes, and validates the run configuration. A missing path
/// means defaults; `seed` overrides the training seed.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io_at(p, e))?;
            let raw: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::config_at(p, e))?;
            let mut cfg: RunConfig =
                serde_json::from_value(raw.clone()).map_err(|e| CliError::config_at(p, e))?;
            // The 51-pixel kernel documents the full-scale setup; desk-sized
            // images get the proportional width unless the file pins one.
            if raw.pointer("/encoder/dib/kernel_size").is_none() {
                cfg.encoder.dib.kernel_size = BlurConfig::desk(cfg.world.image_size).kernel_size;
            }
            if raw.pointer("/encoder/dib/kernel_sigma").is_none() {
                cfg.encoder.dib.kernel_sigma = cfg.encoder.dib.kernel_size as f64 / 6.0;
            }
            cfg
        }
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}
