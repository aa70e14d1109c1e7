use super::{StftEngine, StftParams, Waveform, LOG_EPS};
use crate::{Error, Result};

/// FFT sizes of the multi-scale spectral distance; each uses hop = size / 4.
pub const MULTISCALE_FFT_SIZES: [usize; 6] = [2048, 1024, 512, 256, 128, 64];

/// Sum over scales of mean |ΔM| + mean |Δ log(M + LOG_EPS)| between the
/// magnitude spectrograms of `a` and `b`. Means run over bins and frames.
pub fn multiscale_spectral_distance(a: &Waveform, b: &Waveform, scales: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut total = 0.0;
    for &n in scales {
        let engine = StftEngine::new(StftParams::hann(n, n / 4)?);
        let ma = engine.stft(a)?.magnitude().data;
        let mb = engine.stft(b)?.magnitude().data;
        let cells = ma.len() as f64;
        let lin: f64 = ma.iter().zip(mb.iter()).map(|(x, y)| (x - y).abs()).sum();
        let log: f64 = ma
            .iter()
            .zip(mb.iter())
            .map(|(x, y)| ((x + LOG_EPS).ln() - (y + LOG_EPS).ln()).abs())
            .sum();
        total += (lin + log) / cells;
    }
    Ok(total)
}
