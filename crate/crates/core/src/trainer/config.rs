use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SilencePolicy, MAX_EXTRA_STEMS};
use crate::nets::NetworkConfig;
use crate::objectives::{LossWeights, LAMBDA_REC, LAMBDA_VQ};
use crate::vq::{CODEBOOK_SIZE, KMEANS_ITERS};
use crate::{Error, Result};

use super::AdamConfig;

/// Network size preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkPreset {
    Full,
    Tiny,
}

impl NetworkPreset {
    pub fn config(self) -> NetworkConfig {
        match self {
            NetworkPreset::Full => NetworkConfig::full(),
            NetworkPreset::Tiny => NetworkConfig::tiny(),
        }
    }
}

/// Training configuration, read from a flat TOML file.
///
/// ```toml
/// dataset = "toy"          # stem directory, relative to the run directory
/// network = "tiny"         # or "full"
/// batch_size = 32
/// micro_batch = 4          # examples per forward/backward pass
/// total_steps = 20000
/// lr_g = 1e-4              # style encoder, projection and generator
/// lr_d = 1e-4
/// beta1 = 0.5
/// beta2 = 0.9
/// lambda_rec = 2.5
/// lambda_vq = 100.0
/// codebook_size = 16
/// kmeans_iters = 10
/// max_extra_stems = 4
/// silence_dbfs = -60.0
/// seed = 0
/// checkpoint_every = 1000
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: Option<PathBuf>,
    pub network: NetworkPreset,
    pub batch_size: usize,
    pub micro_batch: usize,
    pub total_steps: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_rec: f64,
    pub lambda_vq: f64,
    pub codebook_size: usize,
    pub kmeans_iters: usize,
    pub max_extra_stems: usize,
    pub silence_dbfs: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            network: NetworkPreset::Full,
            batch_size: 32,
            micro_batch: 4,
            total_steps: 20_000,
            lr_g: 1e-4,
            lr_d: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            lambda_rec: LAMBDA_REC,
            lambda_vq: LAMBDA_VQ,
            codebook_size: CODEBOOK_SIZE,
            kmeans_iters: KMEANS_ITERS,
            max_extra_stems: MAX_EXTRA_STEMS,
            silence_dbfs: -60.0,
            seed: 0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    /// Small configuration for tests and toy runs.
    pub fn tiny() -> Self {
        Self {
            network: NetworkPreset::Tiny,
            batch_size: 8,
            micro_batch: 4,
            codebook_size: 8,
            total_steps: 200,
            checkpoint_every: 100,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn network_config(&self) -> NetworkConfig {
        self.network.config()
    }

    pub fn silence(&self) -> SilencePolicy {
        SilencePolicy {
            threshold_dbfs: self.silence_dbfs,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            rec: self.lambda_rec,
            vq: self.lambda_vq,
        }
    }

    pub fn adam_g(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_g,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    pub fn adam_d(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr_d,
            ..self.adam_g()
        }
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dataset.is_none() {
            problems.push("dataset: missing stem directory".to_string());
        }
        let mut positive = |name: &str, ok: bool| {
            if !ok {
                problems.push(format!("{name}: must be positive"));
            }
        };
        positive("batch_size", self.batch_size > 0);
        positive("micro_batch", self.micro_batch > 0);
        positive("total_steps", self.total_steps > 0);
        positive("lr_g", self.lr_g > 0.0 && self.lr_g.is_finite());
        positive("lr_d", self.lr_d > 0.0 && self.lr_d.is_finite());
        positive("codebook_size", self.codebook_size > 0);
        positive("kmeans_iters", self.kmeans_iters > 0);
        positive("checkpoint_every", self.checkpoint_every > 0);
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("{name}: must lie in [0, 1)"));
            }
        }
        for (name, l) in [("lambda_rec", self.lambda_rec), ("lambda_vq", self.lambda_vq)] {
            if !(l >= 0.0 && l.is_finite()) {
                problems.push(format!("{name}: must be non-negative"));
            }
        }
        if self.batch_size < self.codebook_size {
            problems.push(format!(
                "batch_size: {} is smaller than codebook_size {} needed for k-means initialization",
                self.batch_size, self.codebook_size
            ));
        }
        if !self.silence_dbfs.is_finite() {
            problems.push("silence_dbfs: must be finite".into());
        }
        if let Err(e) = self.network_config().validate() {
            problems.push(format!("network: {e}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Dataset path resolved against `run_dir`.
    pub fn dataset_path(&self, run_dir: &Path) -> Result<PathBuf> {
        let d = self
            .dataset
            .as_ref()
            .ok_or_else(|| Error::Config("dataset: missing stem directory".into()))?;
        Ok(run_dir.join(d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = TrainConfig::tiny();
        c.dataset = Some("toy".into());
        let back = TrainConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_dataset_is_named() {
        let err = TrainConfig::default().validate().unwrap_err().to_string();
        assert!(err.contains("dataset"), "{err}");
    }

    #[test]
    fn batch_below_codebook_size_is_rejected() {
        let c = TrainConfig {
            dataset: Some("x".into()),
            batch_size: 8,
            codebook_size: 16,
            ..TrainConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("batch_size"));
    }

    #[test]
    fn unknown_keys_and_bad_types_fail() {
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
        assert!(TrainConfig::from_toml("batch_size = \"many\"").is_err());
        let c = TrainConfig::from_toml("dataset = \"d\"\nnetwork = \"tiny\"\nseed = 3").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.network, NetworkPreset::Tiny);
        assert_eq!(c.batch_size, 32);
    }
}
