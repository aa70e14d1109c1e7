use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Waveform, LOG_EPS};
use crate::{Error, Result};

/// Envelope values at or below this are treated as uncovered by any frame.
const ENVELOPE_FLOOR: f64 = 1e-10;

/// Frame geometry and analysis window.
#[derive(Clone, PartialEq)]
pub struct StftParams {
    fft_size: usize,
    hop_size: usize,
    window: Arc<[f64]>,
}

impl fmt::Debug for StftParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StftParams")
            .field("fft_size", &self.fft_size)
            .field("hop_size", &self.hop_size)
            .finish()
    }
}

impl Default for StftParams {
    fn default() -> Self {
        Self::hann(2048, 512).expect("default STFT parameters satisfy COLA")
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

impl StftParams {
    /// Hann-windowed parameters, validated for constant overlap-add.
    pub fn hann(fft_size: usize, hop_size: usize) -> Result<Self> {
        Self::with_window(fft_size, hop_size, hann_window(fft_size))
    }

    pub fn with_window(fft_size: usize, hop_size: usize, window: Vec<f64>) -> Result<Self> {
        if fft_size < 2 || fft_size % 2 != 0 {
            return Err(Error::StftParams(format!("fft_size {fft_size} must be even and >= 2")));
        }
        if hop_size == 0 || hop_size > fft_size {
            return Err(Error::StftParams(format!(
                "hop_size {hop_size} must be in 1..={fft_size}"
            )));
        }
        if window.len() != fft_size {
            return Err(Error::StftParams("window length must equal fft_size".into()));
        }
        if window.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::StftParams("window must be finite and non-negative".into()));
        }
        let params = Self {
            fft_size,
            hop_size,
            window: window.into(),
        };
        let deviation = params.cola_deviation();
        if deviation > 1e-6 {
            return Err(Error::StftParams(format!(
                "window violates constant overlap-add at hop {hop_size} (relative deviation {deviation:.3e})"
            )));
        }
        Ok(params)
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop_size(&self) -> usize {
        self.hop_size
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count under centre (reflection) padding.
    pub fn frames(&self, len: usize) -> usize {
        1 + len / self.hop_size
    }

    /// Relative spread of the hop-shifted sum of squared windows over one
    /// period; zero for a perfect COLA window.
    pub fn cola_deviation(&self) -> f64 {
        let mut sums = vec![0.0; self.hop_size];
        for (n, w) in self.window.iter().enumerate() {
            sums[n % self.hop_size] += w * w;
        }
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        if max <= 0.0 {
            return f64::INFINITY;
        }
        (max - min) / max
    }
}

/// Complex STFT, `[bins, frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub re: Array2<f64>,
    pub im: Array2<f64>,
    pub params: StftParams,
}

macro_rules! real_spectrogram {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            pub data: Array2<f64>,
            pub params: StftParams,
        }

        impl $name {
            pub fn bins(&self) -> usize {
                self.data.nrows()
            }

            pub fn frames(&self) -> usize {
                self.data.ncols()
            }
        }
    };
}

real_spectrogram!(
    /// `|STFT|`, non-negative.
    MagnitudeSpectrogram
);
real_spectrogram!(
    /// `log(|STFT| + LOG_EPS)`.
    LogMagnitudeSpectrogram
);
real_spectrogram!(
    /// `angle(STFT)` in `(-pi, pi]`.
    PhaseSpectrogram
);

impl ComplexSpectrogram {
    pub fn bins(&self) -> usize {
        self.re.nrows()
    }

    pub fn frames(&self) -> usize {
        self.re.ncols()
    }

    pub fn magnitude(&self) -> MagnitudeSpectrogram {
        let data = ndarray::Zip::from(&self.re)
            .and(&self.im)
            .map_collect(|a, b| a.hypot(*b));
        MagnitudeSpectrogram {
            data,
            params: self.params.clone(),
        }
    }

    pub fn phase(&self) -> PhaseSpectrogram {
        let data = ndarray::Zip::from(&self.re).and(&self.im).map_collect(|a, b| {
            let p = b.atan2(*a);
            if p <= -PI {
                PI
            } else {
                p
            }
        });
        PhaseSpectrogram {
            data,
            params: self.params.clone(),
        }
    }
}

/// FFT plans plus the analysis/synthesis maps and their adjoints for one
/// [`StftParams`].
///
/// Spectra are stored bin-major (`[bins, frames]`, row = bin) so that a
/// batch of them forms the `[batch, bins, frames]` layout the networks use.
pub struct StftEngine {
    params: StftParams,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for StftEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StftEngine").field("params", &self.params).finish()
    }
}

impl StftEngine {
    pub fn new(params: StftParams) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(params.fft_size);
        let inverse = planner.plan_fft_inverse(params.fft_size);
        Self {
            params,
            forward,
            inverse,
        }
    }

    pub fn params(&self) -> &StftParams {
        &self.params
    }

    pub fn bins(&self) -> usize {
        self.params.bins()
    }

    pub fn frames(&self, len: usize) -> usize {
        self.params.frames(len)
    }

    fn half(&self) -> usize {
        self.params.fft_size / 2
    }

    /// Shortest signal the reflection padding supports.
    pub fn min_len(&self) -> usize {
        self.half() + 1
    }

    /// Index into the signal for padded position `j`.
    fn reflect(&self, j: usize, len: usize) -> usize {
        let half = self.half();
        if j < half {
            half - j
        } else if j < half + len {
            j - half
        } else {
            let m = j - half - len;
            len - 2 - m
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len < self.min_len() {
            return Err(Error::TooShort {
                len,
                needed: self.min_len(),
            });
        }
        Ok(())
    }

    /// Windowed, centre-padded real DFT of `signal` into bin-major `re`/`im`.
    pub fn analyze(&self, signal: &[f64], re: &mut [f64], im: &mut [f64]) -> Result<()> {
        let len = signal.len();
        self.check_len(len)?;
        let (n, hop, bins) = (self.params.fft_size, self.params.hop_size, self.bins());
        let frames = self.frames(len);
        assert_eq!(re.len(), bins * frames);
        assert_eq!(im.len(), bins * frames);
        let window = self.params.window();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for t in 0..frames {
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = Complex64::new(window[i] * signal[self.reflect(t * hop + i, len)], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..bins {
                re[k * frames + t] = buf[k].re;
                im[k * frames + t] = buf[k].im;
            }
        }
        Ok(())
    }

    /// Adjoint of [`analyze`](Self::analyze): accumulates into `out` (the
    /// signal-domain gradient) for a signal of length `out.len()`.
    pub fn analyze_adjoint(&self, re: &[f64], im: &[f64], out: &mut [f64]) {
        let len = out.len();
        let (n, hop, bins) = (self.params.fft_size, self.params.hop_size, self.bins());
        let frames = self.frames(len);
        let window = self.params.window();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for t in 0..frames {
            buf.fill(Complex64::new(0.0, 0.0));
            for k in 0..bins {
                buf[k] = Complex64::new(re[k * frames + t], im[k * frames + t]);
            }
            // Re(sum_k G_k e^{+i 2 pi k n / N}) is the transpose of the real DFT.
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            for i in 0..n {
                out[self.reflect(t * hop + i, len)] += window[i] * buf[i].re;
            }
        }
    }

    /// Sum of squared windows at every padded position.
    fn envelope(&self, frames: usize) -> Vec<f64> {
        let (n, hop) = (self.params.fft_size, self.params.hop_size);
        let mut env = vec![0.0; (frames - 1) * hop + n];
        for t in 0..frames {
            for (i, w) in self.params.window().iter().enumerate() {
                env[t * hop + i] += w * w;
            }
        }
        env
    }

    /// Weighted overlap-add inverse of bin-major `re`/`im`, cropped to `len`
    /// samples after removing the centre padding.
    pub fn synthesize(&self, re: &[f64], im: &[f64], frames: usize, len: usize) -> Vec<f64> {
        let (n, hop, bins) = (self.params.fft_size, self.params.hop_size, self.bins());
        let half = self.half();
        assert_eq!(re.len(), bins * frames);
        let env = self.envelope(frames);
        let mut padded = vec![0.0; env.len()];
        let window = self.params.window();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let scale = 1.0 / n as f64;
        for t in 0..frames {
            buf[0] = Complex64::new(re[t], 0.0);
            buf[half] = Complex64::new(re[half * frames + t], 0.0);
            for k in 1..half {
                let z = Complex64::new(re[k * frames + t], im[k * frames + t]);
                buf[k] = z;
                buf[n - k] = z.conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            for i in 0..n {
                padded[t * hop + i] += window[i] * buf[i].re * scale;
            }
        }
        (0..len)
            .map(|i| {
                let j = i + half;
                if j < padded.len() && env[j] > ENVELOPE_FLOOR {
                    padded[j] / env[j]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Adjoint of [`synthesize`](Self::synthesize) for an output gradient
    /// `grad` of length `len`; writes bin-major spectra.
    pub fn synthesize_adjoint(&self, grad: &[f64], frames: usize, re: &mut [f64], im: &mut [f64]) {
        let (n, hop, bins) = (self.params.fft_size, self.params.hop_size, self.bins());
        let half = self.half();
        let env = self.envelope(frames);
        let mut padded = vec![0.0; env.len()];
        for (i, g) in grad.iter().enumerate() {
            let j = i + half;
            if j < padded.len() && env[j] > ENVELOPE_FLOOR {
                padded[j] = g / env[j];
            }
        }
        let window = self.params.window();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for t in 0..frames {
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = Complex64::new(window[i] * padded[t * hop + i], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..bins {
                let c = if k == 0 || k == half { 1.0 } else { 2.0 } / n as f64;
                re[k * frames + t] = c * buf[k].re;
                im[k * frames + t] = if k == 0 || k == half { 0.0 } else { c * buf[k].im };
            }
        }
    }

    pub fn stft(&self, w: &Waveform) -> Result<ComplexSpectrogram> {
        if w.len() < self.params.fft_size {
            return Err(Error::TooShort {
                len: w.len(),
                needed: self.params.fft_size,
            });
        }
        let (bins, frames) = (self.bins(), self.frames(w.len()));
        let mut re = vec![0.0; bins * frames];
        let mut im = vec![0.0; bins * frames];
        self.analyze(w.samples(), &mut re, &mut im)?;
        Ok(ComplexSpectrogram {
            re: Array2::from_shape_vec((bins, frames), re).expect("shape"),
            im: Array2::from_shape_vec((bins, frames), im).expect("shape"),
            params: self.params.clone(),
        })
    }

    pub fn istft(
        &self,
        mag: &MagnitudeSpectrogram,
        phase: &PhaseSpectrogram,
        len: usize,
    ) -> Result<Waveform> {
        if mag.params != self.params || phase.params != self.params {
            return Err(Error::Shape("spectrogram STFT parameters differ from the engine's".into()));
        }
        if mag.data.dim() != phase.data.dim() {
            return Err(Error::Shape(format!(
                "magnitude {:?} vs phase {:?}",
                mag.data.dim(),
                phase.data.dim()
            )));
        }
        if mag.bins() != self.bins() {
            return Err(Error::Shape(format!(
                "{} bins, expected {}",
                mag.bins(),
                self.bins()
            )));
        }
        let frames = mag.frames();
        if frames == 0 {
            return Err(Error::Shape("spectrogram has no frames".into()));
        }
        let re: Vec<f64> = mag.data.iter().zip(phase.data.iter()).map(|(m, p)| m * p.cos()).collect();
        let im: Vec<f64> = mag.data.iter().zip(phase.data.iter()).map(|(m, p)| m * p.sin()).collect();
        Ok(Waveform::from_samples(self.synthesize(&re, &im, frames, len)))
    }
}

/// Complex STFT with centre reflection padding.
pub fn stft(w: &Waveform, params: &StftParams) -> Result<ComplexSpectrogram> {
    StftEngine::new(params.clone()).stft(w)
}

/// Inverse STFT producing `len` samples. `len` defaults to the length the
/// frame count implies, `(frames - 1) * hop`.
pub fn istft(
    mag: &MagnitudeSpectrogram,
    phase: &PhaseSpectrogram,
    params: &StftParams,
    len: Option<usize>,
) -> Result<Waveform> {
    let len = len.unwrap_or((mag.frames().max(1) - 1) * params.hop_size());
    StftEngine::new(params.clone()).istft(mag, phase, len)
}

/// Elementwise `log(|z| + LOG_EPS)`.
pub fn log_magnitude(s: &ComplexSpectrogram) -> LogMagnitudeSpectrogram {
    let mag = s.magnitude();
    LogMagnitudeSpectrogram {
        data: mag.data.mapv(|m| (m + LOG_EPS).ln()),
        params: mag.params,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{sine, CROP_LEN};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn default_params_satisfy_cola() {
        let p = StftParams::default();
        assert_eq!((p.fft_size(), p.hop_size(), p.bins()), (2048, 512, 1025));
        assert!(p.cola_deviation() < 1e-6);
        assert!(StftParams::hann(2048, 700).is_err());
        assert!(StftParams::hann(512, 600).is_err());
    }

    #[test]
    fn zero_waveform_gives_zero_spectrum() {
        let s = stft(&Waveform::zeros(CROP_LEN), &StftParams::default()).unwrap();
        assert_eq!(s.frames(), 1 + CROP_LEN / 512);
        assert!(s.magnitude().data.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn too_short_input_is_rejected() {
        let err = stft(&Waveform::zeros(2047), &StftParams::default()).unwrap_err();
        assert!(matches!(err, Error::TooShort { .. }));
    }

    /// Direct O(N^2) DFT of one windowed frame is the independent oracle.
    #[test]
    fn bin_centred_sine_concentrates_in_its_bin() {
        let p = StftParams::default();
        let k = 40;
        let freq = k as f64 * 44_100.0 / 2048.0;
        let w = sine(freq, 1.0, 8192);
        let s = stft(&w, &p).unwrap();
        let t = 6;
        let energy = s.magnitude().data.mapv(|m| m * m);
        let total: f64 = energy.column(t).iter().sum();
        // A Hann main lobe spans bins k-1..=k+1 with amplitudes 1/2, 1, 1/2.
        assert!(energy[[k, t]] / total >= 0.6);
        let lobe: f64 = (k - 1..=k + 1).map(|b| energy[[b, t]]).sum();
        assert!(lobe / total >= 0.95, "energy share {}", lobe / total);

        let start = t * 512;
        let frame: Vec<f64> = (0..2048)
            .map(|n| p.window()[n] * w.samples()[start + n - 1024])
            .collect();
        for bin in [k - 1, k, k + 1, 100] {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, x) in frame.iter().enumerate() {
                let ang = -2.0 * PI * (bin * n) as f64 / 2048.0;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            assert!((s.re[[bin, t]] - re).abs() < 1e-8);
            assert!((s.im[[bin, t]] - im).abs() < 1e-8);
        }
    }

    #[test]
    fn magnitude_scales_linearly() {
        let p = StftParams::default();
        let w = Waveform::from_samples(noise(5000, 1));
        let w2 = Waveform::from_samples(w.samples().iter().map(|v| 2.0 * v).collect());
        let a = stft(&w, &p).unwrap().magnitude();
        let b = stft(&w2, &p).unwrap().magnitude();
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert!((2.0 * x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn round_trip_reconstructs_noise_and_sine() {
        let p = StftParams::default();
        for w in [Waveform::from_samples(noise(CROP_LEN, 3)), sine(440.0, 1.0, CROP_LEN)] {
            let s = stft(&w, &p).unwrap();
            let y = istft(&s.magnitude(), &s.phase(), &p, Some(w.len())).unwrap();
            assert!(rel_l2(y.samples(), w.samples()) < 1e-5);
        }
    }

    #[test]
    fn zero_magnitude_synthesizes_silence() {
        let p = StftParams::default();
        let frames = 20;
        let mag = MagnitudeSpectrogram {
            data: Array2::zeros((1025, frames)),
            params: p.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phase = PhaseSpectrogram {
            data: Array2::from_shape_fn((1025, frames), |_| rng.random_range(-PI..PI)),
            params: p.clone(),
        };
        let y = istft(&mag, &phase, &p, None).unwrap();
        assert_eq!(y.len(), 19 * 512);
        assert!(y.samples().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn istft_rejects_geometry_mismatch() {
        let p = StftParams::default();
        let mag = MagnitudeSpectrogram {
            data: Array2::zeros((1025, 5)),
            params: p.clone(),
        };
        let phase = PhaseSpectrogram {
            data: Array2::zeros((1025, 6)),
            params: p.clone(),
        };
        assert!(matches!(istft(&mag, &phase, &p, None), Err(Error::Shape(_))));
    }

    #[test]
    fn log_magnitude_floor_and_unit() {
        let p = StftParams::default();
        let s = stft(&Waveform::zeros(4096), &p).unwrap();
        let lm = log_magnitude(&s);
        assert!(lm.data.iter().all(|v| (*v - LOG_EPS.ln()).abs() < 1e-15));
        let mut s2 = s.clone();
        s2.re[[3, 2]] = 1.0 - LOG_EPS;
        assert!(log_magnitude(&s2).data[[3, 2]].abs() < 1e-15);
    }

    #[test]
    fn phase_lies_in_half_open_interval() {
        let p = StftParams::default();
        let s = stft(&Waveform::from_samples(noise(6000, 5)), &p).unwrap();
        assert!(s.phase().data.iter().all(|v| *v > -PI && *v <= PI));
    }

    /// <A x, y> = <x, A^T y> for both linear maps.
    #[test]
    fn adjoints_pass_dot_product_test() {
        for (n, hop, len) in [(64, 16, 300), (2048, 512, 5000), (128, 32, 129)] {
            let engine = StftEngine::new(StftParams::hann(n, hop).unwrap());
            let frames = engine.frames(len);
            let cells = engine.bins() * frames;
            let x = noise(len, 6);
            let (gr, gi) = (noise(cells, 7), noise(cells, 8));
            let (mut re, mut im) = (vec![0.0; cells], vec![0.0; cells]);
            engine.analyze(&x, &mut re, &mut im).unwrap();
            let lhs: f64 = re.iter().zip(&gr).chain(im.iter().zip(&gi)).map(|(a, b)| a * b).sum();
            let mut xt = vec![0.0; len];
            engine.analyze_adjoint(&gr, &gi, &mut xt);
            let rhs: f64 = x.iter().zip(&xt).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "analysis {lhs} vs {rhs}");

            let y = engine.synthesize(&gr, &gi, frames, len);
            let lhs: f64 = y.iter().zip(&x).map(|(a, b)| a * b).sum();
            let (mut ar, mut ai) = (vec![0.0; cells], vec![0.0; cells]);
            engine.synthesize_adjoint(&x, frames, &mut ar, &mut ai);
            let rhs: f64 = ar.iter().zip(&gr).chain(ai.iter().zip(&gi)).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "synthesis {lhs} vs {rhs}");
        }
    }
}
