//! WAV ingestion and output. Inputs may be 16/24/32-bit PCM or 32-bit float
//! with any channel count; channels are averaged down to mono.

use std::path::Path;

use super::Waveform;
use crate::{Error, Result};

/// On-disk sample encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Header of a WAV file: (sample rate, channels, frames per channel).
pub fn probe_wav(path: &Path) -> Result<(u32, u16, usize)> {
    let reader = hound::WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    let frames = reader.duration() as usize;
    Ok((spec.sample_rate, spec.channels, frames))
}

/// Reads a WAV file as mono, averaging channels.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err(path))?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(mono, spec.sample_rate)
}

pub fn write_wav(path: &Path, w: &Waveform, format: SampleFormat) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: match format {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Pcm16 => hound::SampleFormat::Int,
            SampleFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err(path))?;
    for &s in w.samples() {
        match format {
            SampleFormat::Pcm16 => {
                let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                writer.write_sample(v).map_err(wav_err(path))?;
            }
            SampleFormat::Float32 => writer.write_sample(s as f32).map_err(wav_err(path))?,
        }
    }
    writer.finalize().map_err(wav_err(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::sine;

    #[test]
    fn float_round_trip_is_exact_to_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = sine(440.0, 0.5, 1000);
        write_wav(&path, &w, SampleFormat::Float32).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate(), 44_100);
        for (a, b) in r.samples().iter().zip(w.samples()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn stereo_is_downmixed_by_mean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 44_100,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..10 {
            wr.write_sample(16384i16).unwrap();
            wr.write_sample(0i16).unwrap();
        }
        wr.finalize().unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.len(), 10);
        assert!(r.samples().iter().all(|v| (*v - 0.25).abs() < 1e-12));
        assert_eq!(probe_wav(&path).unwrap(), (44_100, 2, 10));
    }
}
