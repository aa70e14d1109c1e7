//! The trainable networks: style encoder, FiLM-conditioned U-Net generator
//! and spectrogram discriminator.
//!
//! All three treat a spectrogram as a 1-D signal over time whose channels
//! are the frequency bins (or mel bands), and are built from residual
//! blocks with group normalization. Each network owns a [`ParamStore`] and
//! is evaluated by binding that store into a fresh [`Graph`].

mod discriminator;
mod encoder;
mod generator;
mod layers;

pub use discriminator::Discriminator;
pub use encoder::{StyleEmbedding, StyleEncoder, EMBED_DIM};
pub use generator::{mixture_phase, Generator, GeneratorOutput, GeneratorVars, COND_DIM};
pub use layers::film;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamStore};
use crate::{Error, Result};

/// How the generator forms its output phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// The phase head predicts absolute phase; only the adversarial and
    /// multi-scale losses shape it.
    #[default]
    Generated,
    /// The phase head predicts a rotation applied to the mixture phase.
    /// The network input is still magnitude only.
    MixtureRelative,
}

/// Channel layout of the three networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Generator width per U-Net level; the level count is the length.
    pub generator_widths: Vec<usize>,
    /// Residual blocks per generator level, on both sides of the U-Net.
    pub blocks_per_level: usize,
    pub encoder_widths: Vec<usize>,
    pub discriminator_widths: Vec<usize>,
    pub groups: usize,
    #[serde(default)]
    pub phase: PhaseMode,
}

impl NetworkConfig {
    /// 4 levels of 64, 128, 256 and 512 channels.
    pub fn full() -> Self {
        Self {
            generator_widths: vec![64, 128, 256, 512],
            blocks_per_level: 2,
            encoder_widths: vec![64, 128, 256],
            discriminator_widths: vec![64, 128, 256],
            groups: 8,
            phase: PhaseMode::Generated,
        }
    }

    /// 2 levels starting at 16 channels, for tests and toy runs. A network
    /// this small trained for thousands rather than millions of steps
    /// cannot learn phase from scratch, so it rotates the mixture phase.
    pub fn tiny() -> Self {
        Self {
            generator_widths: vec![16, 32],
            blocks_per_level: 1,
            encoder_widths: vec![16, 32],
            discriminator_widths: vec![16, 32],
            groups: 8,
            phase: PhaseMode::MixtureRelative,
        }
    }

    pub fn levels(&self) -> usize {
        self.generator_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::Config("groups must be positive".into()));
        }
        if self.blocks_per_level == 0 {
            return Err(Error::Config("blocks_per_level must be positive".into()));
        }
        for (name, widths) in [
            ("generator_widths", &self.generator_widths),
            ("encoder_widths", &self.encoder_widths),
            ("discriminator_widths", &self.discriminator_widths),
        ] {
            if widths.is_empty() {
                return Err(Error::Config(format!("{name} is empty")));
            }
            if let Some(w) = widths.iter().find(|&&w| w == 0 || w % self.groups != 0) {
                return Err(Error::Config(format!(
                    "{name}: width {w} is not a positive multiple of {} groups",
                    self.groups
                )));
            }
        }
        Ok(())
    }
}

/// Rounds `frames` up to a multiple of `2^levels`.
pub(crate) fn padded_frames(frames: usize, levels: usize) -> usize {
    let m = 1 << levels;
    frames.div_ceil(m) * m
}

/// Evaluates a network without recording gradients.
pub(crate) fn inference_graph() -> Graph {
    Graph::new()
}

/// Trainable state shared by every network type.
pub trait Network {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configs_validate() {
        NetworkConfig::full().validate().unwrap();
        NetworkConfig::tiny().validate().unwrap();
        let mut bad = NetworkConfig::tiny();
        bad.generator_widths = vec![16, 20];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn padding_rounds_up_to_the_level_multiple() {
        assert_eq!(padded_frames(130, 2), 132);
        assert_eq!(padded_frames(128, 4), 128);
        assert_eq!(padded_frames(130, 4), 144);
    }
}
