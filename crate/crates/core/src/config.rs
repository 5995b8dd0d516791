//! Flat experiment configuration. Every key mirrors a CLI flag; a resolved
//! copy is written next to each run's results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curriculum::ScheduleKind;
use crate::data::{DEFAULT_EVAL_NEGATIVES, DEFAULT_MIN_INTERACTIONS};
use crate::error::{Error, Result};
use crate::model::{HyperParams, RegSign};
use crate::privacy::PrivacyConfig;
use crate::runtime::{RunOptions, SamplerConfig, VariantKind, VariantSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    /// `tab` or `double-colon`; detected from the file when unset.
    pub format: Option<String>,
    pub variant: VariantKind,
    pub seed: u64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub dim: usize,
    pub eta: f64,
    pub v1: f64,
    pub v2: f64,
    pub schedule: ScheduleKind,
    pub reg_sign: RegSign,
    pub batch_size: usize,
    /// `0` means full participation.
    pub clients_per_round: usize,
    pub exclude_previous: bool,
    pub dp: bool,
    pub tau: f64,
    pub z: f64,
    pub min_interactions: usize,
    pub eval_negatives: usize,
    pub workers: usize,
    pub full_eval_every: u64,
    /// `0` disables checkpoints.
    pub checkpoint_every: u64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        let dp = PrivacyConfig::default();
        ExperimentConfig {
            dataset: None,
            format: None,
            variant: VariantKind::FedRap,
            seed: 0,
            rounds: hp.t1,
            local_epochs: hp.t2,
            dim: hp.k,
            eta: hp.eta,
            v1: hp.v1,
            v2: hp.v2,
            schedule: ScheduleKind::Tanh,
            reg_sign: hp.reg_sign,
            batch_size: hp.batch_size,
            clients_per_round: 0,
            exclude_previous: false,
            dp: false,
            tau: dp.tau,
            z: dp.z,
            min_interactions: DEFAULT_MIN_INTERACTIONS,
            eval_negatives: DEFAULT_EVAL_NEGATIVES,
            workers: 0,
            full_eval_every: 10,
            checkpoint_every: 0,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            k: self.dim,
            eta: self.eta,
            v1: self.v1,
            v2: self.v2,
            t1: self.rounds,
            t2: self.local_epochs,
            batch_size: self.batch_size,
            reg_sign: self.reg_sign,
        }
    }

    pub fn privacy(&self) -> PrivacyConfig {
        PrivacyConfig {
            enabled: self.dp,
            tau: self.tau,
            z: self.z,
        }
    }

    pub fn variant_spec(&self) -> VariantSpec {
        VariantSpec::new(self.variant)
            .with_schedule(self.schedule)
            .with_privacy(self.privacy())
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            sampler: SamplerConfig {
                clients_per_round: (self.clients_per_round > 0).then_some(self.clients_per_round),
                exclude_previous: self.exclude_previous,
            },
            workers: self.workers,
            full_eval_every: self.full_eval_every,
            ..RunOptions::default()
        }
    }

    pub fn rating_format(&self) -> Result<Option<crate::data::RatingFormat>> {
        self.format.as_deref().map(str::parse).transpose()
    }

    /// Hex SHA-256 of everything that influences training results. Output
    /// locations and the worker count are excluded.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        canonical.workers = 0;
        canonical.checkpoint_every = 0;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
