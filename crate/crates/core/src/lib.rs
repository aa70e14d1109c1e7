//! Query-free self-supervised music source separation.
//!
//! A query-conditioned separator is trained end to end on random crops of
//! unlabelled stems: a style encoder embeds a reference crop, a vector
//! quantizer snaps that embedding onto a small cosine codebook, and a
//! FiLM-conditioned U-Net extracts the matching source from a mixture. At
//! inference no query is needed: sweeping every codebook entry splits a mix
//! into up to `N` sources.
//!
//! Crate layout:
//! - [`dsp`]: STFT/iSTFT, log and mel spectrograms, multi-scale spectral distance, WAV I/O
//! - [`autograd`]: the small reverse-mode differentiation engine the networks run on
//! - [`vq`]: factorized cosine codebook with k-means init and EMA updates
//! - [`nets`]: style encoder, U-Net generator, discriminator
//! - [`objectives`]: reconstruction, hinge and commitment losses
//! - [`data`]: stem ingestion, crop/mix sampling, the synthetic toy corpus
//! - [`trainer`]: training session, checkpoints, logging
//! - [`separator`]: codebook-sweep inference
//! - [`evalsuite`]: per-class L1 table, cluster histogram, report export
//! - [`cli`]: the `vqsep` command implementations

pub mod autograd;
pub mod cli;
pub mod data;
pub mod dsp;
pub mod evalsuite;
pub mod nets;
pub mod objectives;
pub mod separator;
pub mod trainer;
pub mod vq;

mod error;

pub use error::{Error, Result};
