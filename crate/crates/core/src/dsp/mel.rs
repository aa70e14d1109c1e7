use ndarray::{Array2, Axis};

use super::{StftEngine, StftParams, Waveform, LOG_EPS};
use crate::Result;

pub const N_MELS: usize = 128;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `[n_mels, fft_size / 2 + 1]`, spanning
/// 0 Hz to Nyquist with peak-one triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    pub sample_rate: u32,
    pub fft_size: usize,
    /// Centre frequency of every band in Hz.
    pub centres: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, fft_size: usize, n_mels: usize) -> Self {
        let bins = fft_size / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut weights = Array2::zeros((n_mels, bins));
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[[m, k]] = w;
            }
        }
        Self {
            weights,
            sample_rate,
            fft_size,
            centres: edges[1..=n_mels].to_vec(),
        }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }
}

/// Log-compressed mel spectrogram, `[N_MELS, frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Array2<f64>,
    pub params: StftParams,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.data.ncols()
    }
}

impl StftEngine {
    /// `log(filterbank · |STFT(w)| + LOG_EPS)`.
    pub fn mel_spectrogram(&self, w: &Waveform, filterbank: &MelFilterbank) -> Result<MelSpectrogram> {
        let mag = self.stft(w)?.magnitude();
        let mel = filterbank.weights.dot(&mag.data);
        Ok(MelSpectrogram {
            data: mel.mapv(|v| (v + LOG_EPS).ln()),
            params: self.params().clone(),
        })
    }
}

/// 128-bin log-mel spectrogram with the default STFT parameters.
pub fn mel_spectrogram(w: &Waveform) -> Result<MelSpectrogram> {
    let params = StftParams::default();
    let fb = MelFilterbank::new(w.sample_rate(), params.fft_size(), N_MELS);
    StftEngine::new(params).mel_spectrogram(w, &fb)
}

/// Index of the loudest mel band averaged over frames.
pub fn dominant_band(mel: &MelSpectrogram) -> usize {
    let means = mel.data.mean_axis(Axis(1)).expect("non-empty");
    means
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
