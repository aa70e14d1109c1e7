//! STFT analysis and resynthesis of a two-tone signal, with the COLA
//! check and the multi-scale distance to a detuned copy.
//!
//! `cargo run --release --example stft_roundtrip`

use vqsep::dsp::{istft, multiscale_spectral_distance, sine, stft, StftParams, Waveform, MULTISCALE_FFT_SIZES};

fn main() -> vqsep::Result<()> {
    let params = StftParams::default();
    println!(
        "fft {} hop {} bins {} cola deviation {:.2e}",
        params.fft_size(),
        params.hop_size(),
        params.bins(),
        params.cola_deviation()
    );

    let tone = |f: f64| sine(f, 0.4, 44_100).into_samples();
    let x = Waveform::from_samples(tone(220.0).iter().zip(tone(3300.0)).map(|(a, b)| a + b).collect());
    let spec = stft(&x, &params)?;
    let y = istft(&spec.magnitude(), &spec.phase(), &params, Some(x.len()))?;
    let err: f64 = x.samples().iter().zip(y.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = x.samples().iter().map(|a| a * a).sum::<f64>().sqrt();
    println!("{} frames, round-trip relative L2 {:.2e}", spec.frames(), err / norm);

    let detuned = Waveform::from_samples(tone(233.0).iter().zip(tone(3300.0)).map(|(a, b)| a + b).collect());
    println!(
        "multi-scale distance: to itself {:.3}, to a detuned copy {:.3}",
        multiscale_spectral_distance(&x, &x, &MULTISCALE_FFT_SIZES)?,
        multiscale_spectral_distance(&x, &detuned, &MULTISCALE_FFT_SIZES)?
    );
    Ok(())
}
