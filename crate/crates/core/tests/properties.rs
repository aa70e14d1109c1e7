//! Randomized invariants over the signal, codebook and loss primitives.

use proptest::prelude::*;
use vqsep::dsp::{istft, stft, StftParams, Waveform};
use vqsep::objectives::{adversarial_d_loss, adversarial_g_loss, log_spectral_l1};
use vqsep::vq::{Assignments, Codebook, CODE_DIM};

fn signal(min: usize, max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, min..max)
}

fn codebook() -> impl Strategy<Value = Codebook> {
    prop::collection::vec(-1.0f64..1.0, CODE_DIM * 2..=CODE_DIM * 16)
        .prop_filter("whole rows with nonzero norms", |v| {
            v.len() % CODE_DIM == 0 && v.chunks(CODE_DIM).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        })
        .prop_map(|v| Codebook::from_entries(CODE_DIM, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stft_round_trip_is_exact_for_any_length(x in signal(256, 4000)) {
        let params = StftParams::hann(256, 64).unwrap();
        let w = Waveform::from_samples(x);
        let spec = stft(&w, &params).unwrap();
        let back = istft(&spec.magnitude(), &spec.phase(), &params, Some(w.len())).unwrap();
        let worst = w.samples().iter().zip(back.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn quantize_picks_a_maximal_cosine(cb in codebook(), z in prop::collection::vec(-1.0f64..1.0, CODE_DIM)) {
        let r = cb.quantize(&z);
        let sim = |i: usize| cb.entry(i).iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        let best = (0..cb.size()).map(sim).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(sim(r.code_index), best);
        prop_assert!((0..r.code_index).all(|i| sim(i) < best));
    }

    #[test]
    fn ema_updates_keep_entries_unit_norm(
        cb in codebook(),
        batches in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, CODE_DIM * 4), 1..20),
    ) {
        let mut cb = cb;
        for batch in batches {
            let mut a = Assignments::zeros(cb.size(), CODE_DIM);
            for z in batch.chunks(CODE_DIM) {
                a.add(cb.nearest(z), z);
            }
            cb.ema_update(&a);
            prop_assert!(cb.max_norm_deviation() < 1e-9);
        }
    }

    #[test]
    fn hinge_losses_are_bounded_below(
        real in prop::collection::vec(-5.0f64..5.0, 1..16),
        fake in prop::collection::vec(-5.0f64..5.0, 1..16),
    ) {
        prop_assert!(adversarial_d_loss(&real, &fake) >= 0.0);
        let shifted: Vec<f64> = fake.iter().map(|v| v + 1.0).collect();
        prop_assert!(adversarial_g_loss(&shifted) < adversarial_g_loss(&fake));
    }

    #[test]
    fn log_spectral_l1_is_a_symmetric_premetric(a in signal(2048, 2049), b in signal(2048, 2049)) {
        let (a, b) = (Waveform::from_samples(a), Waveform::from_samples(b));
        let ab = log_spectral_l1(&a, &b).unwrap();
        prop_assert_eq!(log_spectral_l1(&a, &a).unwrap(), 0.0);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - log_spectral_l1(&b, &a).unwrap()).abs() < 1e-12);
    }
}
