use rand::Rng;

use super::layers::{Conv, Norm, ResBlock};
use super::{inference_graph, Network, NetworkConfig};
use crate::autograd::{Bound, ParamStore, Tensor, Var};
use crate::dsp::{MelFilterbank, MelSpectrogram, StftEngine, StftParams, Waveform, N_MELS, SAMPLE_RATE};
use crate::{Error, Result};

/// Size of the pooled style embedding.
pub const EMBED_DIM: usize = 512;

/// Output of the style encoder for one excerpt.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleEmbedding(pub Vec<f64>);

/// Residual conv stack over log-mel frames, globally average-pooled over
/// time into a single [`EMBED_DIM`] vector.
pub struct StyleEncoder {
    pub params: ParamStore,
    conv_in: Conv,
    levels: Vec<(Vec<ResBlock>, Option<Conv>)>,
    norm_out: Norm,
    conv_out: Conv,
    engine: StftEngine,
    filterbank: MelFilterbank,
}

impl Network for StyleEncoder {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl StyleEncoder {
    pub fn new(config: &NetworkConfig, rng: &mut impl Rng) -> Self {
        let ps = &mut ParamStore::new();
        let widths = &config.encoder_widths;
        let conv_in = Conv::same(ps, "conv_in", N_MELS, widths[0], rng);
        let mut levels = Vec::new();
        for (i, &w) in widths.iter().enumerate() {
            let blocks = (0..config.blocks_per_level)
                .map(|j| ResBlock::new(ps, &format!("level{i}.block{j}"), w, w, config.groups, None, rng))
                .collect();
            let down = widths
                .get(i + 1)
                .map(|&next| Conv::down(ps, &format!("level{i}.down"), w, next, rng));
            levels.push((blocks, down));
        }
        let last = *widths.last().unwrap();
        let norm_out = Norm::new(ps, "norm_out", last, config.groups);
        let conv_out = Conv::pointwise(ps, "conv_out", last, EMBED_DIM, rng);
        let params = std::mem::take(ps);
        let stft = StftParams::default();
        Self {
            params,
            conv_in,
            levels,
            norm_out,
            conv_out,
            filterbank: MelFilterbank::new(SAMPLE_RATE, stft.fft_size(), N_MELS),
            engine: StftEngine::new(stft),
        }
    }

    /// Fewest frames the downsampling stack accepts.
    pub fn min_frames(&self) -> usize {
        1 << self.levels.len()
    }

    /// `[B, N_MELS, T]` log-mel input to `[B, EMBED_DIM]`.
    pub fn forward<'g>(&self, p: &Bound<'g>, mel: Var<'g>) -> Var<'g> {
        let mut h = self.conv_in.forward(p, mel);
        for (blocks, down) in &self.levels {
            for block in blocks {
                h = block.forward(p, h, None);
            }
            if let Some(down) = down {
                h = down.forward(p, h);
            }
        }
        let h = self.conv_out.forward(p, self.norm_out.forward(p, h).silu());
        h.mean_last()
    }

    /// Log-mel spectrograms of equal-length waveforms stacked as `[B, N_MELS, T]`.
    pub fn mel_batch(&self, waves: &[&Waveform]) -> Result<Tensor> {
        let mut data = Vec::new();
        let mut frames = None;
        for w in waves {
            let mel = self.engine.mel_spectrogram(w, &self.filterbank)?;
            if *frames.get_or_insert(mel.frames()) != mel.frames() {
                return Err(Error::Shape("mel batch needs equal-length waveforms".into()));
            }
            data.extend(mel.data.iter());
        }
        let frames = frames.ok_or_else(|| Error::Empty("no waveforms to encode".into()))?;
        Ok(Tensor::new(vec![waves.len(), N_MELS, frames], data))
    }

    /// Embedding of one mel spectrogram.
    pub fn style_encode(&self, mel: &MelSpectrogram) -> Result<StyleEmbedding> {
        if mel.data.nrows() != N_MELS {
            return Err(Error::Shape(format!("expected {N_MELS} mel bins, got {}", mel.data.nrows())));
        }
        if mel.frames() < self.min_frames() {
            return Err(Error::TooShort {
                len: mel.frames(),
                needed: self.min_frames(),
            });
        }
        let g = inference_graph();
        let p = self.params.bind(&g, false);
        let x = g.constant(Tensor::new(vec![1, N_MELS, mel.frames()], mel.data.iter().copied().collect()));
        Ok(StyleEmbedding(self.forward(&p, x).value().data().to_vec()))
    }

    /// Embeddings of a batch of equal-length waveforms, `[B, EMBED_DIM]`.
    pub fn embed(&self, waves: &[&Waveform]) -> Result<Tensor> {
        let mel = self.mel_batch(waves)?;
        let g = inference_graph();
        let p = self.params.bind(&g, false);
        Ok((*self.forward(&p, g.constant(mel)).value()).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::testing::{numeric_grad, rel_err};
    use crate::autograd::Graph;
    use crate::dsp::{mel_spectrogram, sine};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder() -> StyleEncoder {
        StyleEncoder::new(&NetworkConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(1))
    }

    fn mel_of(frames: usize, value: f64) -> MelSpectrogram {
        MelSpectrogram {
            data: Array2::from_elem((N_MELS, frames), value),
            params: StftParams::default(),
        }
    }

    #[test]
    fn embedding_size_is_independent_of_length() {
        let e = encoder();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for frames in [64, 128] {
            let mut mel = mel_of(frames, 0.0);
            mel.data.mapv_inplace(|_| rng.random_range(-5.0..0.0));
            assert_eq!(e.style_encode(&mel).unwrap().0.len(), EMBED_DIM);
        }
    }

    #[test]
    fn zero_mel_gives_finite_embedding() {
        let z = encoder().style_encode(&mel_of(64, 0.0)).unwrap();
        assert!(z.0.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_too_few_frames_and_wrong_bins() {
        let e = encoder();
        assert!(matches!(e.style_encode(&mel_of(2, 0.0)), Err(Error::TooShort { .. })));
        let narrow = MelSpectrogram {
            data: Array2::zeros((64, 32)),
            params: StftParams::default(),
        };
        assert!(e.style_encode(&narrow).is_err());
    }

    #[test]
    fn waveform_and_mel_paths_agree() {
        let e = encoder();
        let w = sine(330.0, 0.5, 8192);
        let a = e.style_encode(&mel_spectrogram(&w).unwrap()).unwrap();
        let b = e.embed(&[&w]).unwrap();
        assert_eq!(a.0, b.data());
    }

    #[test]
    fn squared_norm_gradient_matches_finite_differences() {
        let e = encoder();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = vec![1, N_MELS, 8];
        let x = Tensor::new(shape.clone(), (0..N_MELS * 8).map(|_| rng.random_range(-2.0..2.0)).collect());
        fn loss<'g>(e: &StyleEncoder, g: &'g Graph, v: Var<'g>) -> Var<'g> {
            let p = e.params.bind(g, false);
            e.forward(&p, v).square().sum()
        }
        let g = Graph::new();
        let xv = g.param(x.clone());
        let analytic = g.backward(loss(&e, &g, xv)).get_or_zeros(xv);
        let numeric = numeric_grad(&x, 1e-5, |t| {
            let g = Graph::new();
            loss(&e, &g, g.constant(t.clone())).item()
        });
        assert!(rel_err(&analytic, &numeric) < 1e-2);
    }
}
