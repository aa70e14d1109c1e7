use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use super::layers::{crop_index, reflect_index, upsample_index, Conv, Linear, Norm, ResBlock};
use super::{inference_graph, padded_frames, Network, NetworkConfig, PhaseMode};
use crate::autograd::{Bound, ParamStore, Tensor, Var};
use crate::dsp::{
    istft_var, ComplexSpectrogram, MagnitudeSpectrogram, PhaseSpectrogram, StftEngine, StftParams, Waveform, LOG_EPS,
};
use crate::vq::CODE_DIM;
use crate::{Error, Result};

/// Width of the shared conditioning vector fed to every FiLM head.
pub const COND_DIM: usize = 128;

/// Keeps the (cos, sin) normalization away from a zero radius.
const PHASE_EPS: f64 = 1e-12;

/// Initial cosine bias of a mixture-relative phase head, so that the
/// initial rotation is a few degrees at most.
const ROTATION_BIAS: f64 = 3.0;

/// Unit `(cos, sin)` of the mixture phase as `[2 * bins, frames]`, cosines
/// first; silent cells get angle zero.
pub fn mixture_phase(spec: &ComplexSpectrogram) -> Tensor {
    let (bins, frames) = (spec.bins(), spec.frames());
    let mut data = vec![0.0; 2 * bins * frames];
    let (cos, sin) = data.split_at_mut(bins * frames);
    for (i, (re, im)) in spec.re.iter().zip(spec.im.iter()).enumerate() {
        let r = re.hypot(*im);
        (cos[i], sin[i]) = if r > 0.0 { (re / r, im / r) } else { (1.0, 0.0) };
    }
    Tensor::new(vec![2 * bins, frames], data)
}

/// Everything [`Generator::forward`] records on the graph.
pub struct GeneratorVars<'g> {
    /// `[B, bins, frames]`, non-negative.
    pub magnitude: Var<'g>,
    /// `[B, 2, bins, frames]` real and imaginary parts.
    pub spectrum: Var<'g>,
    /// `[B, len]`.
    pub waveform: Var<'g>,
}

/// Plain result of a single generation.
#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    pub magnitude: MagnitudeSpectrogram,
    pub phase: PhaseSpectrogram,
    pub waveform: Waveform,
}

struct Level {
    blocks: Vec<ResBlock>,
}

/// U-Net over mixture log-magnitude frames with FiLM conditioning in every
/// residual block.
///
/// The magnitude head predicts a non-negative gain that multiplies the
/// mixture magnitude; the phase head predicts a (cos, sin) pair per cell,
/// used either as the phase itself or as a rotation of the mixture phase
/// (see [`PhaseMode`]).
pub struct Generator {
    pub params: ParamStore,
    cond_in: Linear,
    cond_hidden: Linear,
    conv_in: Conv,
    down_levels: Vec<Level>,
    downs: Vec<Conv>,
    ups: Vec<Conv>,
    up_levels: Vec<Level>,
    norm_out: Norm,
    gain_head: Conv,
    phase_head: Conv,
    phase_mode: PhaseMode,
    engine: Arc<StftEngine>,
}

impl Network for Generator {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl Generator {
    pub fn new(config: &NetworkConfig, engine: Arc<StftEngine>, rng: &mut impl Rng) -> Self {
        let ps = &mut ParamStore::new();
        let bins = engine.bins();
        let widths = &config.generator_widths;
        let groups = config.groups;
        let cond = Some(COND_DIM);
        let he = 6f64.sqrt();
        let cond_in = Linear::with_gain(ps, "cond.in", CODE_DIM, COND_DIM, he, rng);
        let cond_hidden = Linear::with_gain(ps, "cond.hidden", COND_DIM, COND_DIM, he, rng);
        let conv_in = Conv::same(ps, "conv_in", bins, widths[0], rng);

        let mut down_levels = Vec::new();
        let mut downs = Vec::new();
        for (i, &w) in widths.iter().enumerate() {
            let blocks = (0..config.blocks_per_level)
                .map(|j| ResBlock::new(ps, &format!("down{i}.block{j}"), w, w, groups, cond, rng))
                .collect();
            down_levels.push(Level { blocks });
            if let Some(&next) = widths.get(i + 1) {
                downs.push(Conv::down(ps, &format!("down{i}.down"), w, next, rng));
            }
        }

        let mut ups = Vec::new();
        let mut up_levels = Vec::new();
        for i in (0..widths.len() - 1).rev() {
            let w = widths[i];
            ups.push(Conv::same(ps, &format!("up{i}.up"), widths[i + 1], w, rng));
            let blocks = (0..config.blocks_per_level)
                .map(|j| {
                    let cin = if j == 0 { 2 * w } else { w };
                    ResBlock::new(ps, &format!("up{i}.block{j}"), cin, w, groups, cond, rng)
                })
                .collect();
            up_levels.push(Level { blocks });
        }

        let norm_out = Norm::new(ps, "norm_out", widths[0], groups);
        let gain_head = Conv::pointwise(ps, "gain_head", widths[0], bins, rng);
        let phase_head = Conv::pointwise(ps, "phase_head", widths[0], 2 * bins, rng);
        if config.phase == PhaseMode::MixtureRelative {
            phase_head.bias_mut(ps).data_mut()[..bins].fill(ROTATION_BIAS);
        }
        Self {
            params: std::mem::take(ps),
            cond_in,
            cond_hidden,
            conv_in,
            down_levels,
            downs,
            ups,
            up_levels,
            norm_out,
            gain_head,
            phase_head,
            phase_mode: config.phase,
            engine,
        }
    }

    pub fn engine(&self) -> &Arc<StftEngine> {
        &self.engine
    }

    pub fn levels(&self) -> usize {
        self.down_levels.len()
    }

    pub fn phase_mode(&self) -> PhaseMode {
        self.phase_mode
    }

    /// Generates from mixture magnitudes `[B, bins, frames]` and codes
    /// `[B, CODE_DIM]`; the waveform has `len` samples. `mix_phase` is the
    /// batched [`mixture_phase`], `[B, 2 * bins, frames]`, and is ignored in
    /// [`PhaseMode::Generated`].
    pub fn forward<'g>(
        &self,
        p: &Bound<'g>,
        mix_mag: Var<'g>,
        mix_phase: Var<'g>,
        code: Var<'g>,
        len: usize,
    ) -> GeneratorVars<'g> {
        let shape = mix_mag.shape();
        let (batch, bins, frames) = (shape[0], shape[1], shape[2]);
        assert_eq!(bins, self.engine.bins(), "generator: bin count");
        assert_eq!(code.shape(), [batch, CODE_DIM], "generator: code shape");

        // Unit-norm codes are rescaled to unit-variance entries and the MLP
        // keeps that scale, so FiLM starts with a visible effect. The output
        // layer is linear: a saturating activation could shut the
        // conditioning off for good.
        let cond = self.cond_in.forward(p, code.scale((CODE_DIM as f64).sqrt())).silu();
        let cond = self.cond_hidden.forward(p, cond);

        let padded = padded_frames(frames, self.levels());
        let x = mix_mag.affine(1.0, LOG_EPS).ln();
        let x = if padded == frames {
            x
        } else {
            x.gather_last(reflect_index(frames, padded))
        };

        let mut h = self.conv_in.forward(p, x);
        let mut skips = Vec::new();
        for (i, level) in self.down_levels.iter().enumerate() {
            for block in &level.blocks {
                h = block.forward(p, h, Some(cond));
            }
            if let Some(down) = self.downs.get(i) {
                skips.push(h);
                h = down.forward(p, h);
            }
        }
        for ((up, level), skip) in self.ups.iter().zip(&self.up_levels).zip(skips.iter().rev()) {
            let len_here = h.shape()[2];
            h = up.forward(p, h.gather_last(upsample_index(len_here)));
            h = Var::concat(&[h, *skip]);
            for block in &level.blocks {
                h = block.forward(p, h, Some(cond));
            }
        }

        let h = self.norm_out.forward(p, h).silu();
        let crop = crop_index(frames);
        let gain = self.gain_head.forward(p, h).gather_last(crop.clone()).softplus();
        let magnitude = gain.mul(&mix_mag);
        let pc = self.phase_head.forward(p, h).gather_last(crop);
        let cos = pc.slice1(0, bins);
        let sin = pc.slice1(bins, bins);
        let radius = cos.square().add(&sin.square()).affine(1.0, PHASE_EPS).sqrt();
        let (cos, sin) = (cos.div(&radius), sin.div(&radius));
        let (cos, sin) = match self.phase_mode {
            PhaseMode::Generated => (cos, sin),
            PhaseMode::MixtureRelative => {
                assert_eq!(mix_phase.shape(), [batch, 2 * bins, frames], "generator: mixture phase shape");
                let (mc, ms) = (mix_phase.slice1(0, bins), mix_phase.slice1(bins, bins));
                (mc.mul(&cos).sub(&ms.mul(&sin)), ms.mul(&cos).add(&mc.mul(&sin)))
            }
        };
        let re = magnitude.mul(&cos).reshape(vec![batch, 1, bins, frames]);
        let im = magnitude.mul(&sin).reshape(vec![batch, 1, bins, frames]);
        let spectrum = Var::concat(&[re, im]);
        let waveform = istft_var(spectrum, &self.engine, len);
        GeneratorVars {
            magnitude,
            spectrum,
            waveform,
        }
    }

    /// Sets the constant offset of the magnitude gain.
    pub fn set_gain_bias(&mut self, value: f64) {
        self.gain_head.bias_mut(&mut self.params).data_mut().fill(value);
    }

    /// Generates from one mixture spectrum and one code.
    pub fn generate(&self, mix: &ComplexSpectrogram, code: &[f64], len: usize) -> Result<GeneratorOutput> {
        let (bins, frames) = (mix.bins(), mix.frames());
        if bins != self.engine.bins() || *mix.params.window() != *self.engine.params().window() {
            return Err(Error::Shape(format!(
                "mixture magnitude has {bins} bins, generator expects {}",
                self.engine.bins()
            )));
        }
        if frames != self.engine.frames(len) {
            return Err(Error::Shape(format!(
                "{frames} frames do not match a {len}-sample output"
            )));
        }
        if code.len() != CODE_DIM {
            return Err(Error::Shape(format!("code has {} values, expected {CODE_DIM}", code.len())));
        }
        let g = inference_graph();
        let p = self.params.bind(&g, false);
        let mag = mix.magnitude().data;
        let mag = g.constant(Tensor::new(vec![1, bins, frames], mag.iter().copied().collect()));
        let phase = g.constant(mixture_phase(mix).reshaped(vec![1, 2 * bins, frames]));
        let code = g.constant(Tensor::new(vec![1, CODE_DIM], code.to_vec()));
        let out = self.forward(&p, mag, phase, code, len);
        let params: StftParams = self.engine.params().clone();
        let spec = out.spectrum.value();
        let cells = bins * frames;
        let (re, im) = spec.data().split_at(cells);
        let phase = re.iter().zip(im).map(|(r, i)| i.atan2(*r)).collect();
        Ok(GeneratorOutput {
            magnitude: MagnitudeSpectrogram {
                data: Array2::from_shape_vec((bins, frames), out.magnitude.value().data().to_vec())
                    .expect("generator magnitude geometry"),
                params: params.clone(),
            },
            phase: PhaseSpectrogram {
                data: Array2::from_shape_vec((bins, frames), phase).expect("generator phase geometry"),
                params,
            },
            waveform: Waveform::new(out.waveform.value().data().to_vec(), crate::dsp::SAMPLE_RATE)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::testing::{numeric_grad, rel_err};
    use crate::autograd::Graph;
    use crate::dsp::{stft, CROP_LEN};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_engine() -> Arc<StftEngine> {
        Arc::new(StftEngine::new(StftParams::hann(64, 16).unwrap()))
    }

    fn unit_code(rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut c: Vec<f64> = (0..CODE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        c.iter_mut().for_each(|v| *v /= n);
        c
    }

    fn noise(len: usize, rng: &mut ChaCha8Rng) -> Waveform {
        Waveform::from_samples((0..len).map(|_| rng.random_range(-0.5..0.5)).collect())
    }

    #[test]
    fn full_crop_output_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let engine = Arc::new(StftEngine::new(StftParams::default()));
        let g = Generator::new(&NetworkConfig::tiny(), engine.clone(), &mut rng);
        let mix = noise(CROP_LEN, &mut rng);
        let mag = stft(&mix, engine.params()).unwrap();
        let out = g.generate(&mag, &unit_code(&mut rng), CROP_LEN).unwrap();
        assert_eq!(out.waveform.len(), 66_150);
        assert_eq!(out.magnitude.data.dim(), mag.re.dim());
        assert!(out.magnitude.data.iter().all(|&v| v >= 0.0));
        assert!(out.phase.data.iter().all(|&v| v > -std::f64::consts::PI - 1e-12 && v <= std::f64::consts::PI));
        assert!(out.waveform.samples().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn different_codes_give_different_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let engine = small_engine();
        let g = Generator::new(&NetworkConfig::tiny(), engine.clone(), &mut rng);
        let mix = noise(1000, &mut rng);
        let mag = stft(&mix, engine.params()).unwrap();
        let a = g.generate(&mag, &unit_code(&mut rng), 1000).unwrap();
        let b = g.generate(&mag, &unit_code(&mut rng), 1000).unwrap();
        let gap: f64 = a.waveform.samples().iter().zip(b.waveform.samples()).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(gap > 0.0);
        let again = g.generate(&mag, &unit_code(&mut ChaCha8Rng::seed_from_u64(9)), 1000).unwrap();
        let twice = g.generate(&mag, &unit_code(&mut ChaCha8Rng::seed_from_u64(9)), 1000).unwrap();
        assert_eq!(again.waveform, twice.waveform);
    }

    #[test]
    fn rejects_mismatched_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let engine = small_engine();
        let g = Generator::new(&NetworkConfig::tiny(), engine.clone(), &mut rng);
        let mag = stft(&noise(1000, &mut rng), engine.params()).unwrap();
        assert!(g.generate(&mag, &unit_code(&mut rng), 2000).is_err());
        let other = stft(&noise(1000, &mut rng), &StftParams::hann(128, 32).unwrap()).unwrap();
        assert!(g.generate(&other, &unit_code(&mut rng), 1000).is_err());
        assert!(g.generate(&mag, &[1.0, 0.0], 1000).is_err());
    }

    #[test]
    fn odd_frame_counts_are_padded_and_cropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let engine = small_engine();
        let g = Generator::new(&NetworkConfig::tiny(), engine.clone(), &mut rng);
        for len in [500, 513, 777] {
            let mag = stft(&noise(len, &mut rng), engine.params()).unwrap();
            let out = g.generate(&mag, &unit_code(&mut rng), len).unwrap();
            assert_eq!(out.magnitude.frames(), engine.frames(len));
            assert_eq!(out.waveform.len(), len);
        }
    }

    #[test]
    fn code_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let engine = small_engine();
        let gen = Generator::new(&NetworkConfig::tiny(), engine.clone(), &mut rng);
        let spec = stft(&noise(256, &mut rng), engine.params()).unwrap();
        let (bins, frames) = (spec.bins(), spec.frames());
        let mag = Tensor::new(vec![1, bins, frames], spec.magnitude().data.iter().copied().collect());
        let phase = mixture_phase(&spec).reshaped(vec![1, 2 * bins, frames]);
        let code = Tensor::new(vec![1, CODE_DIM], unit_code(&mut rng));
        fn loss<'g>(gen: &Generator, g: &'g Graph, mag: &Tensor, phase: &Tensor, code: Var<'g>) -> Var<'g> {
            let p = gen.params.bind(g, false);
            gen.forward(&p, g.constant(mag.clone()), g.constant(phase.clone()), code, 256)
                .waveform
                .square()
                .sum()
        }
        let g = Graph::new();
        let cv = g.param(code.clone());
        let analytic = g.backward(loss(&gen, &g, &mag, &phase, cv)).get_or_zeros(cv);
        let numeric = numeric_grad(&code, 1e-5, |t| {
            let g = Graph::new();
            loss(&gen, &g, &mag, &phase, g.constant(t.clone())).item()
        });
        assert!(rel_err(&analytic, &numeric) < 1e-3, "{}", rel_err(&analytic, &numeric));
    }

    #[test]
    fn mixture_relative_phase_starts_near_the_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let engine = small_engine();
        let mix = noise(1000, &mut rng);
        let spec = stft(&mix, engine.params()).unwrap();
        let mix_phase = spec.phase().data;
        let mean_gap = |config: &NetworkConfig, rng: &mut ChaCha8Rng| {
            let g = Generator::new(config, engine.clone(), rng);
            let out = g.generate(&spec, &unit_code(rng), 1000).unwrap();
            let gaps = out.phase.data.iter().zip(mix_phase.iter()).map(|(a, b)| (a - b).sin().abs());
            gaps.sum::<f64>() / mix_phase.len() as f64
        };
        let relative = NetworkConfig::tiny();
        let generated = NetworkConfig {
            phase: PhaseMode::Generated,
            ..NetworkConfig::tiny()
        };
        assert!(mean_gap(&relative, &mut rng) < 0.15);
        assert!(mean_gap(&generated, &mut rng) > 0.4);
    }

    #[test]
    fn mixture_phase_is_unit_and_defaults_silence_to_zero_angle() {
        let engine = small_engine();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = stft(&noise(300, &mut rng), engine.params()).unwrap();
        let t = mixture_phase(&spec);
        let cells = spec.bins() * spec.frames();
        let (c, s) = t.data().split_at(cells);
        assert!(c.iter().zip(s).all(|(c, s)| (c * c + s * s - 1.0).abs() < 1e-12));
        let silent = stft(&Waveform::zeros(300), engine.params()).unwrap();
        let t = mixture_phase(&silent);
        assert!(t.data()[..cells].iter().all(|&v| v == 1.0));
        assert!(t.data()[cells..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batched_code_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let engine = small_engine();
        let gen = Generator::new(&NetworkConfig::tiny(), engine.clone(), &mut rng);
        let (mut mags, mut phases) = (Vec::new(), Vec::new());
        for _ in 0..2 {
            let spec = stft(&noise(256, &mut rng), engine.params()).unwrap();
            mags.extend(spec.magnitude().data.iter().copied());
            phases.extend_from_slice(mixture_phase(&spec).data());
        }
        let (bins, frames) = (engine.bins(), engine.frames(256));
        let mag = Tensor::new(vec![2, bins, frames], mags);
        let phase = Tensor::new(vec![2, 2 * bins, frames], phases);
        let mut codes = unit_code(&mut rng);
        codes.extend(unit_code(&mut rng));
        let code = Tensor::new(vec![2, CODE_DIM], codes);
        let probe = Tensor::new(vec![2, 256], (0..512).map(|_| rng.random_range(-1.0..1.0)).collect());
        fn loss<'g>(gen: &Generator, g: &'g Graph, x: (&Tensor, &Tensor, &Tensor), code: Var<'g>) -> Var<'g> {
            let p = gen.params.bind(g, false);
            let out = gen.forward(&p, g.constant(x.0.clone()), g.constant(x.1.clone()), code, 256);
            out.waveform.mul(&g.constant(x.2.clone())).sum()
        }
        let x = (&mag, &phase, &probe);
        let g = Graph::new();
        let cv = g.param(code.clone());
        let analytic = g.backward(loss(&gen, &g, x, cv)).get_or_zeros(cv);
        let numeric = numeric_grad(&code, 1e-5, |t| {
            let g = Graph::new();
            loss(&gen, &g, x, g.constant(t.clone())).item()
        });
        assert!(rel_err(&analytic, &numeric) < 1e-4, "{:?}\n{:?}", analytic.data(), numeric.data());
    }
}
