//! Synthetic labelled corpus with four spectrally separated classes.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::wav::{write_wav, SampleFormat};
use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::Result;

pub const TOY_STEMS_PER_CLASS: usize = 60;
pub const TOY_STEM_SECS: f64 = 4.0;

/// Synthetic source classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyClass {
    /// Sine tones between 60 and 120 Hz with smooth envelopes.
    LowSine,
    /// Noise band-limited to 2 to 6 kHz in sharp bursts.
    NoiseBurst,
    /// Harmonic tones on 300 to 800 Hz fundamentals, partials below 1.8 kHz.
    Harmonic,
    /// Short wideband clicks.
    Click,
}

pub const TOY_CLASSES: [ToyClass; 4] = [ToyClass::LowSine, ToyClass::NoiseBurst, ToyClass::Harmonic, ToyClass::Click];

impl ToyClass {
    pub fn label(self) -> &'static str {
        match self {
            ToyClass::LowSine => "low_sine",
            ToyClass::NoiseBurst => "noise_burst",
            ToyClass::Harmonic => "harmonic",
            ToyClass::Click => "click",
        }
    }

    pub fn synthesize(self, rng: &mut impl Rng) -> Waveform {
        let len = (TOY_STEM_SECS * SAMPLE_RATE as f64) as usize;
        let samples = match self {
            ToyClass::LowSine => tones(len, rng, 60.0..120.0, &[1.0]),
            ToyClass::NoiseBurst => noise_bursts(len, rng),
            ToyClass::Harmonic => {
                let f0 = rng.random_range(300.0..800.0);
                let partials: Vec<f64> = (1..).take_while(|h| *h as f64 * f0 < 1800.0).map(|h| 1.0 / h as f64).collect();
                tones(len, rng, f0..f0 * 1.0001, &partials)
            }
            ToyClass::Click => clicks(len, rng),
        };
        Waveform::from_samples(samples)
    }
}

/// Raised-cosine gate: `attack` and `release` samples of ramp around a
/// flat top of `hold` samples.
fn gate(i: usize, attack: usize, hold: usize, release: usize) -> f64 {
    if i < attack {
        0.5 - 0.5 * (PI * i as f64 / attack as f64).cos()
    } else if i < attack + hold {
        1.0
    } else if i < attack + hold + release {
        0.5 + 0.5 * (PI * (i - attack - hold) as f64 / release as f64).cos()
    } else {
        0.0
    }
}

/// Sequence of notes separated by short gaps. Each note draws its own
/// fundamental from `f0` and sums the given partial amplitudes.
fn tones(len: usize, rng: &mut impl Rng, f0: std::ops::Range<f64>, partials: &[f64]) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0; len];
    let mut pos = rng.random_range(0..(0.2 * sr) as usize);
    let norm: f64 = partials.iter().sum();
    while pos < len {
        let note = rng.random_range((0.4 * sr) as usize..(1.2 * sr) as usize);
        let ramp = (0.05 * sr) as usize;
        let freq = rng.random_range(f0.clone());
        let amp = rng.random_range(0.2..0.5) / norm;
        let phase = rng.random_range(0.0..2.0 * PI);
        for i in 0..note.min(len - pos) {
            let t = i as f64 / sr;
            let env = gate(i, ramp, note - 2 * ramp, ramp);
            let v: f64 = partials
                .iter()
                .enumerate()
                .map(|(h, a)| a * (2.0 * PI * freq * (h + 1) as f64 * t + phase).sin())
                .sum();
            out[pos + i] += amp * env * v;
        }
        pos += note + rng.random_range(0..(0.25 * sr) as usize);
    }
    out
}

/// White noise restricted to 2 to 6 kHz by zeroing FFT bins.
fn band_noise(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..len).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let hz = SAMPLE_RATE as f64 / len as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * hz;
        if !(2000.0..=6000.0).contains(&f) {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    out.iter().map(|v| v / rms).collect()
}

fn noise_bursts(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let noise = band_noise(len, rng);
    let mut env = vec![0.0; len];
    let mut pos = rng.random_range(0..(0.1 * sr) as usize);
    while pos < len {
        let burst = rng.random_range((0.08 * sr) as usize..(0.3 * sr) as usize);
        let amp = rng.random_range(0.1..0.25);
        let attack = (0.002 * sr) as usize;
        for i in 0..burst.min(len - pos) {
            let decay = (-3.0 * i as f64 / burst as f64).exp();
            env[pos + i] = amp * decay * (i as f64 / attack as f64).min(1.0);
        }
        pos += burst + rng.random_range((0.02 * sr) as usize..(0.2 * sr) as usize);
    }
    noise.iter().zip(&env).map(|(n, e)| n * e).collect()
}

fn clicks(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0; len];
    let mut pos = rng.random_range(0..(0.05 * sr) as usize);
    while pos < len {
        let amp = rng.random_range(0.4..0.8) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let width = rng.random_range(20..60);
        for i in 0..width.min(len - pos) {
            out[pos + i] += amp * (-(i as f64) / (width as f64 / 5.0)).exp() * if i % 2 == 0 { 1.0 } else { -0.6 };
        }
        pos += rng.random_range((0.06 * sr) as usize..(0.2 * sr) as usize);
    }
    out
}

/// Writes `<out_dir>/<label>/<label>_<nn>.wav` for every class, 16-bit PCM.
/// The corpus is a pure function of `seed`.
pub fn make_toy_corpus(out_dir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for (c, class) in TOY_CLASSES.iter().enumerate() {
        let dir = out_dir.join(class.label());
        fs::create_dir_all(&dir)?;
        for i in 0..TOY_STEMS_PER_CLASS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((c * TOY_STEMS_PER_CLASS + i) as u64);
            let w = class.synthesize(&mut rng);
            let path = dir.join(format!("{}_{i:02}.wav", class.label()));
            write_wav(&path, &w, SampleFormat::Pcm16)?;
            paths.push(path);
        }
    }
    Ok(paths)
}
