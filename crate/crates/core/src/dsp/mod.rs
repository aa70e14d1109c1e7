//! Signal processing kernel: waveforms, STFT/iSTFT, log and mel
//! spectrograms, multi-scale spectral distance and WAV I/O.
//!
//! Everything here is a pure function of its inputs. The STFT engine also
//! exposes the adjoints of its analysis and synthesis maps, which is what
//! lets the training losses differentiate through `stft` and `istft`.

mod diff;
mod mel;
mod spectral;
mod stft;
pub mod wav;

pub use diff::{istft_var, log_magnitude_var, stft_var};
pub use mel::{dominant_band, mel_spectrogram, MelFilterbank, MelSpectrogram, N_MELS};
pub use spectral::{multiscale_spectral_distance, MULTISCALE_FFT_SIZES};
pub use stft::{
    istft, log_magnitude, stft, ComplexSpectrogram, LogMagnitudeSpectrogram, MagnitudeSpectrogram,
    PhaseSpectrogram, StftEngine, StftParams,
};

use crate::{Error, Result};

/// Sample rate every stem, crop and output uses.
pub const SAMPLE_RATE: u32 = 44_100;

/// Training crop length, 1.5 s at 44.1 kHz.
pub const CROP_LEN: usize = 66_150;

/// Floor added inside every log compression.
pub const LOG_EPS: f64 = 1e-5;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// 44.1 kHz waveform; panics on non-finite samples.
    pub fn from_samples(samples: Vec<f64>) -> Self {
        Self::new(samples, SAMPLE_RATE).expect("finite samples")
    }

    pub fn zeros(len: usize) -> Self {
        Self::from_samples(vec![0.0; len])
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sub-range copy `[start, start + len)`.
    pub fn crop(&self, start: usize, len: usize) -> Waveform {
        Waveform {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Unit-amplitude sine, handy for tests and examples.
pub fn sine(freq: f64, amplitude: f64, len: usize) -> Waveform {
    let sr = SAMPLE_RATE as f64;
    Waveform::from_samples(
        (0..len)
            .map(|n| amplitude * (2.0 * std::f64::consts::PI * freq * n as f64 / sr).sin())
            .collect(),
    )
}
