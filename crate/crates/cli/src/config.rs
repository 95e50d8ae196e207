//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fedadapt::data::SyntheticConfig;
use fedadapt::federation::DEFAULT_SPLIT;
use fedadapt::{Error, FlRunConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Embedding files feeding a run. With a `[synth]` block and no client
/// files, the synthetic sources become the clients and the held-out domain
/// serves as both target pool and global evaluation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub clients: Vec<PathBuf>,
    pub target_pool: Option<PathBuf>,
    pub global_eval: Option<PathBuf>,
    /// Train/validation/test fractions of every client file.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            clients: Vec::new(),
            target_pool: None,
            global_eval: None,
            split: DEFAULT_SPLIT,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Decision-curve thresholds; `None` means 0.00, 0.01, …, 0.99.
    pub dca_thresholds: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; copied into `train.seed` and `synth.seed`.
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub train: FlRunConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub synth: Option<SyntheticConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

fn keyed(prefix: &str, e: Error) -> anyhow::Error {
    match e {
        Error::InvalidArgument { name, reason } => anyhow::anyhow!("invalid config key `{prefix}{name}`: {reason}"),
        other => anyhow::anyhow!("invalid config under `{prefix}`: {other}"),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        if let Some(s) = &mut self.synth {
            s.seed = seed;
        }
    }

    /// Checks values and key combinations; does not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        self.train.adam.validate().map_err(|e| keyed("train.adam.", e))?;
        self.train
            .discriminator
            .validate()
            .map_err(|e| keyed("train.discriminator.", e))?;
        self.train.validate().map_err(|e| keyed("train.", e))?;
        if let Some(s) = &self.synth {
            s.validate().map_err(|e| keyed("synth.", e))?;
        }
        let split_ok = self.data.split.iter().all(|r| (0.0..=1.0).contains(r))
            && (self.data.split.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if !split_ok {
            bail!(
                "invalid config key `data.split`: {:?} must be in [0, 1] and sum to 1",
                self.data.split
            );
        }
        if self.data.clients.is_empty() && self.synth.is_none() {
            bail!("invalid config key `data.clients`: no client files and no [synth] block");
        }
        if !self.data.clients.is_empty() && self.train.enable_da && self.data.target_pool.is_none() {
            bail!("invalid config key `data.target_pool`: required when train.enable_da = true");
        }
        if let Some(ts) = &self.metrics.dca_thresholds {
            if let Some(t) = ts.iter().find(|t| !(0.0..1.0).contains(*t)) {
                bail!("invalid config key `metrics.dca_thresholds`: {t} outside [0, 1)");
            }
        }
        Ok(())
    }

    /// Every referenced input file must exist.
    pub fn check_paths(&self) -> Result<()> {
        let named = self
            .data
            .clients
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("data.clients[{i}]"), p))
            .chain(self.data.target_pool.iter().map(|p| ("data.target_pool".to_owned(), p)))
            .chain(self.data.global_eval.iter().map(|p| ("data.global_eval".to_owned(), p)));
        for (key, p) in named {
            if !p.is_file() {
                bail!("invalid config key `{key}`: {} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn dca_thresholds(&self) -> Vec<f64> {
        self.metrics
            .dca_thresholds
            .clone()
            .unwrap_or_else(fedadapt::metrics::default_dca_thresholds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_override_gives_reference_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 3\n[synth]\n").unwrap();
        assert_eq!(cfg.train.rounds, 50);
        assert_eq!(cfg.train.lambda, 0.5);
        assert_eq!(cfg.train.adam.learning_rate, 5e-5);
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.synth.as_ref().unwrap().seed, 3);
        cfg.validate().unwrap();
    }

    #[test]
    fn seed_is_required() {
        let err = ExperimentConfig::from_toml("[train]\nrounds = 2\n").unwrap_err();
        assert!(format!("{err:#}").contains("seed"), "{err:#}");
    }

    #[test]
    fn round_trip() {
        let text = "seed = 9\nprecision = \"f64\"\n[train]\nlambda = 2.0\nfam_hidden_dim = 16\n[synth]\ntarget_shift = 2.5\n[metrics]\ndca_thresholds = [0.1, 0.5]\n";
        let a = ExperimentConfig::from_toml(text).unwrap();
        let b = ExperimentConfig::from_toml(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validation_names_nested_key() {
        let cfg = ExperimentConfig::from_toml("seed = 0\n[synth]\n[train.adam]\nbeta2 = 1.5\n").unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("train.adam.beta2"), "{msg}");
    }
}
