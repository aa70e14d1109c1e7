//! Query-free separation: renders a mixture once per codebook entry and
//! writes one WAV per code plus the energy sidecar.
//!
//! `cargo run --release --example separate -- <checkpoint> <mix.wav> <out_dir>`
//!
//! Without arguments an untrained tiny model separates a synthetic mix,
//! which only demonstrates the plumbing.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vqsep::dsp::wav::read_wav;
use vqsep::dsp::{sine, Waveform, CROP_LEN};
use vqsep::nets::NetworkConfig;
use vqsep::separator::separate;
use vqsep::trainer::{load_model, Model};
use vqsep::vq::{Codebook, CODE_DIM};

fn main() -> vqsep::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (model, mix, out) = if let [ckpt, mix, out] = args.as_slice() {
        (load_model(std::path::Path::new(ckpt))?.0, read_wav(std::path::Path::new(mix))?, PathBuf::from(out))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let entries: Vec<f64> = (0..4).flat_map(|i| (0..CODE_DIM).map(move |j| if i == j { 1.0 } else { 0.0 })).collect();
        let model = Model::untrained(&NetworkConfig::tiny(), Codebook::from_entries(CODE_DIM, entries)?, &mut rng);
        let len = 2 * CROP_LEN;
        let mix = Waveform::from_samples(
            sine(110.0, 0.3, len).samples().iter().zip(sine(1760.0, 0.2, len).samples()).map(|(a, b)| a + b).collect(),
        );
        (model, mix, std::env::temp_dir().join("vqsep_separated"))
    };
    let result = separate(&mix, &model)?;
    let paths = result.write(&out)?;
    for (path, info) in paths.iter().zip(result.info()) {
        println!("code {:2}: {:7.1} dBFS -> {}", info.code_index, info.energy_dbfs, path.display());
    }
    Ok(())
}
