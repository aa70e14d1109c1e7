use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Archive;
use crate::autograd::{ParamStore, Tensor};
use crate::dsp::{StftEngine, StftParams, Waveform};
use crate::nets::{Generator, NetworkConfig, StyleEncoder, EMBED_DIM};
use crate::vq::{quantize_batch, CodeProjection, Codebook, QuantizeResult, CODE_DIM};
use crate::{Error, Result};

/// Inference-side networks and codebook: everything needed to encode a
/// reference and to render a mixture under a code.
pub struct Model {
    pub network: NetworkConfig,
    pub encoder: StyleEncoder,
    pub projection: CodeProjection,
    pub generator: Generator,
    pub codebook: Codebook,
}

/// Untrained networks in a fixed construction order.
pub(crate) fn build_networks(
    network: &NetworkConfig,
    engine: Arc<StftEngine>,
    rng: &mut ChaCha8Rng,
) -> (StyleEncoder, CodeProjection, Generator) {
    let encoder = StyleEncoder::new(network, rng);
    let projection = CodeProjection::new(EMBED_DIM, CODE_DIM, rng);
    let generator = Generator::new(network, engine, rng);
    (encoder, projection, generator)
}

pub(crate) fn store_params(archive: &mut Archive, prefix: &str, ps: &ParamStore) {
    for (name, t) in ps.iter() {
        archive.push(format!("{prefix}/{name}"), t.clone());
    }
}

pub(crate) fn load_params(archive: &Archive, prefix: &str, ps: &mut ParamStore) -> Result<()> {
    ps.load_from(|name| archive.get(&format!("{prefix}/{name}")).cloned())
        .map_err(|e| Error::Checkpoint(format!("{prefix}: {e}")))
}

impl Model {
    /// Freshly initialized networks around `codebook`.
    pub fn untrained(network: &NetworkConfig, codebook: Codebook, rng: &mut ChaCha8Rng) -> Self {
        let engine = Arc::new(StftEngine::new(StftParams::default()));
        let (encoder, projection, generator) = build_networks(network, engine, rng);
        Self {
            network: network.clone(),
            encoder,
            projection,
            generator,
            codebook,
        }
    }

    /// Projected unit codes of a batch of references, `[B, CODE_DIM]`.
    pub fn project_batch(&self, refs: &[&Waveform]) -> Result<Tensor> {
        let z = self.encoder.embed(refs)?;
        let dim = self.projection.in_dim();
        let codes = z.data().chunks(dim).flat_map(|row| self.projection.project(row)).collect();
        Ok(Tensor::new(vec![refs.len(), CODE_DIM], codes))
    }

    /// Codebook lookups of a batch of references.
    pub fn codes_for(&self, refs: &[&Waveform]) -> Result<Vec<QuantizeResult>> {
        let codes = self.project_batch(refs)?;
        Ok(quantize_batch(&codes, &self.codebook).0)
    }

    pub fn code_for(&self, reference: &Waveform) -> Result<QuantizeResult> {
        Ok(self.codes_for(&[reference])?.remove(0))
    }

    /// Generator output for `mix` conditioned on `code`, same length as `mix`.
    pub fn render(&self, mix: &Waveform, code: &[f64]) -> Result<Waveform> {
        let engine = self.generator.engine();
        if mix.len() < engine.min_len() {
            return Err(Error::TooShort {
                len: mix.len(),
                needed: engine.min_len(),
            });
        }
        let spec = engine.stft(mix)?;
        Ok(self.generator.generate(&spec, code, mix.len())?.waveform)
    }

    pub fn render_entry(&self, mix: &Waveform, index: usize) -> Result<Waveform> {
        self.render(mix, self.codebook.entry(index))
    }

    pub(crate) fn store(&self, archive: &mut Archive) {
        store_params(archive, "encoder", &self.encoder.params);
        store_params(archive, "projection", &self.projection.params);
        store_params(archive, "generator", &self.generator.params);
        let cb = &self.codebook;
        let (n, d) = (cb.size(), cb.dim());
        archive.push("codebook/entries", Tensor::new(vec![n, d], cb.entries().to_vec()));
        archive.push("codebook/ema_cluster_size", Tensor::new(vec![n], cb.ema_cluster_size().to_vec()));
        archive.push("codebook/ema_embed_sum", Tensor::new(vec![n, d], cb.ema_embed_sum().to_vec()));
    }

    /// Rebuilds the model; the codebook's decay and step come from `meta`.
    pub(crate) fn restore(archive: &Archive, network: &NetworkConfig, decay: f64, cb_step: u64) -> Result<Self> {
        let engine = Arc::new(StftEngine::new(StftParams::default()));
        let (mut encoder, mut projection, mut generator) =
            build_networks(network, engine, &mut ChaCha8Rng::seed_from_u64(0));
        load_params(archive, "encoder", &mut encoder.params)?;
        load_params(archive, "projection", &mut projection.params)?;
        load_params(archive, "generator", &mut generator.params)?;
        let entries = archive.require("codebook/entries")?;
        let dim = *entries.shape().last().unwrap_or(&0);
        let codebook = Codebook::from_state(
            dim,
            entries.data().to_vec(),
            archive.require("codebook/ema_cluster_size")?.data().to_vec(),
            archive.require("codebook/ema_embed_sum")?.data().to_vec(),
            decay,
            cb_step,
        )?;
        if dim != CODE_DIM {
            return Err(Error::Checkpoint(format!("codebook dimension {dim}, expected {CODE_DIM}")));
        }
        Ok(Self {
            network: network.clone(),
            encoder,
            projection,
            generator,
            codebook,
        })
    }
}
