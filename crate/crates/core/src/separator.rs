//! Query-free inference: the mixture is rendered once per codebook entry,
//! giving one estimated source per code.
//!
//! Inputs longer than a training crop are cut into crop-length chunks with
//! about 50% overlap. The hop is snapped to the generator's coarsest frame
//! grid so that overlapping chunks analyse identical frames. Each chunk's
//! output is weighted by a sine window, whose square sums to one across the
//! overlap, and the overlap-add is divided by the summed weights so every
//! sample is a convex blend of the chunks covering it.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::wav::{write_wav, SampleFormat};
use crate::dsp::{Waveform, CROP_LEN, SAMPLE_RATE};
use crate::trainer::Model;
use crate::{Error, Result};

/// Keeps the dBFS of a silent output finite.
pub const ENERGY_EPS: f64 = 1e-5;

/// Name of the JSON sidecar written next to the sources.
pub const SIDECAR: &str = "separation.json";

/// `20 log10(rms + ENERGY_EPS)`.
pub fn source_energy(w: &Waveform) -> f64 {
    20.0 * (w.rms() + ENERGY_EPS).log10()
}

/// One entry of the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub code_index: usize,
    pub energy_dbfs: f64,
}

/// Estimated sources, index-aligned with the codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    pub sources: Vec<Waveform>,
    pub energies_dbfs: Vec<f64>,
}

impl SeparationResult {
    pub fn info(&self) -> Vec<SourceInfo> {
        self.energies_dbfs
            .iter()
            .enumerate()
            .map(|(code_index, &energy_dbfs)| SourceInfo {
                code_index,
                energy_dbfs,
            })
            .collect()
    }

    /// Writes `source_00.wav`, `source_01.wav`, ... as 32-bit float and the
    /// JSON sidecar; returns the WAV paths.
    pub fn write(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir)?;
        let mut paths = Vec::with_capacity(self.sources.len());
        for (i, source) in self.sources.iter().enumerate() {
            let path = out_dir.join(format!("source_{i:02}.wav"));
            write_wav(&path, source, SampleFormat::Float32)?;
            paths.push(path);
        }
        fs::write(out_dir.join(SIDECAR), serde_json::to_string_pretty(&self.info())?)?;
        Ok(paths)
    }
}

/// Frame grid of the generator's coarsest U-Net level, in samples.
fn chunk_grid(model: &Model) -> usize {
    model.generator.engine().params().hop_size() << (model.generator.levels() - 1)
}

/// Start offsets of windows covering `len`, `hop` apart, where `hop` is
/// half a chunk rounded down to a multiple of `grid` so that overlapping
/// chunks see the same frame grid. The last window is cut at `len`.
fn chunk_starts(len: usize, chunk: usize, grid: usize) -> Vec<usize> {
    let grid = grid.clamp(1, (chunk / 2).max(1));
    let hop = chunk / 2 / grid * grid;
    let mut starts = vec![0];
    while starts.last().unwrap() + chunk < len {
        starts.push(starts.last().unwrap() + hop);
    }
    starts
}

/// Crossfade weight of sample `j` of a chunk: a sine window whose square
/// sums to one over a half overlap, flat on the outer half of the first
/// and last chunks.
fn crossfade_weight(j: usize, chunk: usize, first: bool, last: bool) -> f64 {
    let rising = j < chunk / 2;
    if (rising && first) || (!rising && last) {
        1.0
    } else {
        (PI * (j as f64 + 0.5) / chunk as f64).sin()
    }
}

/// Renders `mix` under every code, chunking at `chunk_len` samples.
pub fn separate_with(mix: &Waveform, model: &Model, chunk_len: usize) -> Result<SeparationResult> {
    if mix.is_empty() {
        return Err(Error::Empty("mixture has no samples".into()));
    }
    if mix.sample_rate() != SAMPLE_RATE {
        return Err(Error::Config(format!(
            "mixture is {} Hz, expected {SAMPLE_RATE} Hz",
            mix.sample_rate()
        )));
    }
    let min = model.generator.engine().min_len();
    if mix.len() < min {
        return Err(Error::TooShort { len: mix.len(), needed: min });
    }
    if chunk_len < 2 * min {
        return Err(Error::Config(format!("chunk length {chunk_len} is below {}", 2 * min)));
    }
    let n = model.codebook.size();
    let len = mix.len();
    let sources = if len <= chunk_len {
        (0..n).map(|i| model.render_entry(mix, i)).collect::<Result<Vec<_>>>()?
    } else {
        let starts = chunk_starts(len, chunk_len, chunk_grid(model));
        let mut acc = vec![vec![0.0; len]; n];
        let mut weight = vec![0.0; len];
        for (c, &start) in starts.iter().enumerate() {
            let end = len.min(start + chunk_len);
            let chunk = Waveform::from_samples(mix.samples()[start..end].to_vec());
            let w: Vec<f64> = (0..end - start)
                .map(|j| crossfade_weight(j, chunk_len, c == 0, c + 1 == starts.len()))
                .collect();
            for (acc_w, wj) in weight[start..end].iter_mut().zip(&w) {
                *acc_w += wj;
            }
            for (i, out) in acc.iter_mut().enumerate() {
                let y = model.render_entry(&chunk, i)?;
                for ((o, v), wj) in out[start..end].iter_mut().zip(y.samples()).zip(&w) {
                    *o += wj * v;
                }
            }
        }
        acc.into_iter()
            .map(|s| Waveform::from_samples(s.iter().zip(&weight).map(|(v, w)| v / w).collect()))
            .collect()
    };
    let energies_dbfs = sources.iter().map(source_energy).collect();
    Ok(SeparationResult { sources, energies_dbfs })
}

/// Renders `mix` under every code with training-crop-length chunks.
pub fn separate(mix: &Waveform, model: &Model) -> Result<SeparationResult> {
    separate_with(mix, model, CROP_LEN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::sine;
    use crate::nets::NetworkConfig;
    use crate::vq::{Codebook, CODE_DIM};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(n: usize) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let entries: Vec<f64> = (0..n * CODE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        Model::untrained(&NetworkConfig::tiny(), Codebook::from_entries(CODE_DIM, entries).unwrap(), &mut rng)
    }

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::from_samples((0..len).map(|_| rng.random_range(-0.3..0.3)).collect())
    }

    #[test]
    fn energy_floor_sine_and_monotonicity() {
        assert!((source_energy(&Waveform::zeros(100)) - 20.0 * ENERGY_EPS.log10()).abs() < 1e-12);
        let s = sine(1000.0, 1.0, 44_100);
        assert!((source_energy(&s) + 3.0103).abs() < 1e-3);
        let quiet = Waveform::from_samples(s.samples().iter().map(|v| v * 0.5).collect());
        assert!(source_energy(&quiet) < source_energy(&s));
    }

    #[test]
    fn one_output_per_code_at_input_length() {
        let m = model(16);
        for len in [3000, CROP_LEN + 12_345] {
            let r = separate(&noise(len, 1), &m).unwrap();
            assert_eq!(r.sources.len(), 16);
            assert_eq!(r.energies_dbfs.len(), 16);
            assert!(r.sources.iter().all(|s| s.len() == len && s.samples().iter().all(|v| v.is_finite())));
        }
        let silent = separate(&Waveform::zeros(5000), &m).unwrap();
        assert!(silent.sources.iter().all(|s| s.samples().iter().all(|v| v.is_finite())));
    }

    #[test]
    fn rejects_empty_short_and_resampled_inputs() {
        let m = model(2);
        assert!(matches!(separate(&Waveform::zeros(0), &m), Err(Error::Empty(_))));
        assert!(matches!(separate(&Waveform::zeros(100), &m), Err(Error::TooShort { .. })));
        let w = Waveform::new(vec![0.0; 5000], 22_050).unwrap();
        assert!(matches!(separate(&w, &m), Err(Error::Config(_))));
    }

    #[test]
    fn separation_is_bit_identical_across_calls() {
        let m = model(3);
        let x = noise(CROP_LEN + 5000, 2);
        assert_eq!(separate(&x, &m).unwrap(), separate(&x, &m).unwrap());
    }

    #[test]
    fn chunk_starts_cover_the_input() {
        assert_eq!(chunk_starts(100, 100, 10), [0]);
        assert_eq!(chunk_starts(101, 100, 10), [0, 50]);
        assert_eq!(chunk_starts(250, 100, 16), [0, 48, 96, 144, 192]);
        assert_eq!(chunk_grid(&model(1)), 1024);
        // Squared sine weights sum to one across a half overlap.
        for j in 0..50 {
            let s = crossfade_weight(j + 50, 100, false, false).powi(2) + crossfade_weight(j, 100, false, false).powi(2);
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(crossfade_weight(0, 100, true, false), 1.0);
        assert_eq!(crossfade_weight(99, 100, false, true), 1.0);
    }

    #[test]
    fn chunked_matches_single_pass() {
        // Tonal input keeps the normalization statistics of a chunk close to
        // those of the whole crop, which isolates the crossfade itself.
        let m = model(2);
        let x = Waveform::from_samples(
            sine(440.0, 0.3, CROP_LEN)
                .samples()
                .iter()
                .zip(sine(1250.0, 0.2, CROP_LEN).samples())
                .map(|(a, b)| a + b)
                .collect(),
        );
        let whole = separate(&x, &m).unwrap();
        let chunked = separate_with(&x, &m, 44_100).unwrap();
        for (a, b) in whole.sources.iter().zip(&chunked.sources) {
            let num: f64 = a.samples().iter().zip(b.samples()).map(|(p, q)| (p - q).powi(2)).sum();
            let den: f64 = a.samples().iter().map(|p| p * p).sum();
            let rel = (num / den).sqrt();
            assert!(rel < 0.05, "relative L2 {rel}");
        }
    }

    #[test]
    fn writes_sources_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let r = separate(&noise(4000, 5), &model(4)).unwrap();
        let paths = r.write(dir.path()).unwrap();
        assert_eq!(paths.len(), 4);
        assert!(dir.path().join("source_03.wav").exists());
        let info: Vec<SourceInfo> =
            serde_json::from_str(&fs::read_to_string(dir.path().join(SIDECAR)).unwrap()).unwrap();
        assert_eq!(info, r.info());
    }
}
