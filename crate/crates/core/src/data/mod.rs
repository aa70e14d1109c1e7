//! Stems, silence rules and the self-supervised example sampler.
//!
//! An example is built from one stem: two independent crops become the
//! target and the reference, and the target is summed with crops of up to
//! `K` other stems to form the mixture. The reference must be audible; the
//! target may be silent.

mod manifest;
mod toy;

pub use manifest::{Manifest, Rejection, StemRecord};
pub use toy::{make_toy_corpus, ToyClass, TOY_CLASSES, TOY_STEMS_PER_CLASS, TOY_STEM_SECS};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::wav::read_wav;
use crate::dsp::{Waveform, CROP_LEN};
use crate::{Error, Result};

/// Largest number of extra stems mixed into a target.
pub const MAX_EXTRA_STEMS: usize = 4;

/// Attempts at drawing an audible reference crop from one stem.
pub const REFERENCE_RETRIES: usize = 16;

/// Stems tried before a sampler gives up on an all-silent collection.
pub const STEM_RETRIES: usize = 64;

/// Loudness floor that separates audible crops from silent ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilencePolicy {
    pub threshold_dbfs: f64,
}

impl Default for SilencePolicy {
    fn default() -> Self {
        Self { threshold_dbfs: -60.0 }
    }
}

impl SilencePolicy {
    /// Threshold as a linear RMS amplitude.
    pub fn threshold_rms(&self) -> f64 {
        10f64.powf(self.threshold_dbfs / 20.0)
    }
}

/// True iff the RMS of `w` is strictly below the policy threshold.
pub fn is_silent(w: &Waveform, policy: &SilencePolicy) -> bool {
    w.rms() < policy.threshold_rms()
}

/// Decoded stems held in memory.
#[derive(Debug, Clone)]
pub struct StemPool {
    stems: Vec<Waveform>,
    labels: Vec<Option<String>>,
}

impl StemPool {
    pub fn load(manifest: &Manifest) -> Result<Self> {
        let mut stems = Vec::with_capacity(manifest.len());
        for r in &manifest.records {
            stems.push(read_wav(&r.path)?);
        }
        Ok(Self {
            stems,
            labels: manifest.records.iter().map(|r| r.label.clone()).collect(),
        })
    }

    pub fn from_waveforms(stems: Vec<Waveform>, labels: Vec<Option<String>>) -> Result<Self> {
        if stems.is_empty() {
            return Err(Error::Empty("stem pool".into()));
        }
        if labels.len() != stems.len() {
            return Err(Error::Shape("one label per stem".into()));
        }
        if let Some(s) = stems.iter().find(|s| s.len() < CROP_LEN) {
            return Err(Error::TooShort {
                len: s.len(),
                needed: CROP_LEN,
            });
        }
        Ok(Self { stems, labels })
    }

    pub fn len(&self) -> usize {
        self.stems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stems.is_empty()
    }

    pub fn stem(&self, i: usize) -> &Waveform {
        &self.stems[i]
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels[i].as_deref()
    }

    /// Uniformly placed crop of stem `i`.
    pub fn random_crop(&self, i: usize, rng: &mut impl Rng) -> Waveform {
        let s = &self.stems[i];
        let start = rng.random_range(0..=s.len() - CROP_LEN);
        s.crop(start, CROP_LEN)
    }

    /// Audible crop of stem `i`, or `None` after [`REFERENCE_RETRIES`] draws.
    pub fn audible_crop(&self, i: usize, policy: &SilencePolicy, rng: &mut impl Rng) -> Option<Waveform> {
        (0..REFERENCE_RETRIES)
            .map(|_| self.random_crop(i, rng))
            .find(|c| !is_silent(c, policy))
    }

    /// Uniform draw among stems other than `exclude` (any stem when the
    /// pool holds only one).
    pub fn other_stem(&self, exclude: usize, rng: &mut impl Rng) -> usize {
        if self.len() == 1 {
            return 0;
        }
        let j = rng.random_range(0..self.len() - 1);
        if j >= exclude {
            j + 1
        } else {
            j
        }
    }
}

/// One self-supervised training triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub x_mix: Waveform,
    pub x_targ: Waveform,
    pub x_ref: Waveform,
    /// Number of extra stems in the mixture.
    pub k: usize,
    pub stem: usize,
    pub extra_stems: Vec<usize>,
}

/// Draws a training example from `pool`.
///
/// The mixture is the plain sum of the target crop and `k ~ U{0..=max_k}`
/// crops of other stems, without gains or normalization.
pub fn sample_example(
    pool: &StemPool,
    rng: &mut impl Rng,
    max_k: usize,
    policy: &SilencePolicy,
) -> Result<TrainingExample> {
    if pool.is_empty() {
        return Err(Error::Empty("stem pool".into()));
    }
    for _ in 0..STEM_RETRIES {
        let stem = rng.random_range(0..pool.len());
        let x_targ = pool.random_crop(stem, rng);
        let Some(x_ref) = pool.audible_crop(stem, policy, rng) else {
            continue;
        };
        let k = rng.random_range(0..=max_k);
        let mut mix = x_targ.samples().to_vec();
        let mut extra_stems = Vec::with_capacity(k);
        for _ in 0..k {
            let other = pool.other_stem(stem, rng);
            let crop = pool.random_crop(other, rng);
            for (m, v) in mix.iter_mut().zip(crop.samples()) {
                *m += v;
            }
            extra_stems.push(other);
        }
        return Ok(TrainingExample {
            x_mix: Waveform::new(mix, x_targ.sample_rate())?,
            x_targ,
            x_ref,
            k,
            stem,
            extra_stems,
        });
    }
    Err(Error::Empty(format!(
        "no audible {CROP_LEN}-sample reference found in {STEM_RETRIES} stems"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::sine;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool(n: usize) -> StemPool {
        let stems = (0..n).map(|i| sine(100.0 * (i + 1) as f64, 0.3, 2 * CROP_LEN)).collect();
        StemPool::from_waveforms(stems, vec![None; n]).unwrap()
    }

    #[test]
    fn silence_threshold_is_strict() {
        let policy = SilencePolicy::default();
        assert!(is_silent(&Waveform::zeros(CROP_LEN), &policy));
        assert!(!is_silent(&sine(440.0, 1.0, CROP_LEN), &policy));
        let base = sine(440.0, 1.0, CROP_LEN);
        let threshold = policy.threshold_rms();
        let mut gain = threshold / base.rms();
        let scaled = |g: f64| Waveform::from_samples(base.samples().iter().map(|v| v * g).collect());
        while scaled(gain).rms() < threshold {
            gain *= 1.0 + f64::EPSILON;
        }
        let at = scaled(gain);
        assert!((at.rms() - threshold).abs() < 1e-12 * threshold);
        assert!(!is_silent(&at, &policy));
        assert!(is_silent(&scaled(gain * (1.0 - 1e-9)), &policy));
    }

    #[test]
    fn examples_have_crop_length_and_audible_reference() {
        let p = pool(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let ex = sample_example(&p, &mut rng, MAX_EXTRA_STEMS, &SilencePolicy::default()).unwrap();
            assert_eq!(ex.x_mix.len(), CROP_LEN);
            assert_eq!(ex.x_targ.len(), CROP_LEN);
            assert_eq!(ex.x_ref.len(), CROP_LEN);
            assert!(!is_silent(&ex.x_ref, &SilencePolicy::default()));
            assert!(ex.k <= MAX_EXTRA_STEMS);
            assert!(ex.extra_stems.iter().all(|&s| s != ex.stem));
        }
    }

    #[test]
    fn k_zero_mix_is_the_target() {
        let p = pool(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ex = sample_example(&p, &mut rng, 0, &SilencePolicy::default()).unwrap();
        assert_eq!(ex.k, 0);
        assert_eq!(ex.x_mix, ex.x_targ);
    }

    #[test]
    fn in_phase_sines_sum_linearly() {
        let s = sine(441.0, 1.0, 2 * CROP_LEN);
        let p = StemPool::from_waveforms(vec![s.clone(), s], vec![None, None]).unwrap();
        // Every crop offset of a 441 Hz tone at 44.1 kHz is in phase when the
        // offset is a multiple of 100 samples; search until both crops align.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        loop {
            let ex = sample_example(&p, &mut rng, 1, &SilencePolicy::default()).unwrap();
            if ex.k == 1 {
                let residual: Vec<f64> = ex.x_mix.samples().iter().zip(ex.x_targ.samples()).map(|(m, t)| m - t).collect();
                if residual.iter().zip(ex.x_targ.samples()).all(|(r, t)| (r - t).abs() < 1e-9) {
                    assert!((ex.x_mix.peak() - 2.0).abs() < 1e-6);
                    break;
                }
            }
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let p = pool(4);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_example(&p, &mut rng, MAX_EXTRA_STEMS, &SilencePolicy::default()).unwrap()
        };
        assert_eq!(draw(7), draw(7));
    }

    #[test]
    fn mixture_minus_extras_is_the_target() {
        let p = pool(6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let mut probe = rng.clone();
            let ex = sample_example(&p, &mut rng, MAX_EXTRA_STEMS, &SilencePolicy::default()).unwrap();
            // Replay the draws to recover the extra crops.
            let stem = probe.random_range(0..p.len());
            assert_eq!(stem, ex.stem);
            let _ = p.random_crop(stem, &mut probe);
            let _ = p.audible_crop(stem, &SilencePolicy::default(), &mut probe);
            let k = probe.random_range(0..=MAX_EXTRA_STEMS);
            let mut rest = ex.x_mix.samples().to_vec();
            for _ in 0..k {
                let other = p.other_stem(stem, &mut probe);
                for (r, v) in rest.iter_mut().zip(p.random_crop(other, &mut probe).samples()) {
                    *r -= v;
                }
            }
            // Summation then subtraction in the same order may round; the
            // residual must match to a few ulps.
            for (r, t) in rest.iter().zip(ex.x_targ.samples()) {
                assert!((r - t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn k_is_uniform() {
        let p = pool(5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; MAX_EXTRA_STEMS + 1];
        for _ in 0..10_000 {
            counts[sample_example(&p, &mut rng, MAX_EXTRA_STEMS, &SilencePolicy::default()).unwrap().k] += 1;
        }
        let expected = 10_000.0 / counts.len() as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99th percentile of chi-square with 4 degrees of freedom.
        assert!(chi2 < 13.277, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn all_silent_pool_is_an_error() {
        let p = StemPool::from_waveforms(vec![Waveform::zeros(CROP_LEN)], vec![None]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(sample_example(&p, &mut rng, 2, &SilencePolicy::default()).is_err());
    }
}
