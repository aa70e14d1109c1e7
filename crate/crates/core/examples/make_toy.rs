//! Writes the synthetic four-class corpus, ingests it and draws a few
//! self-supervised training triples.
//!
//! `cargo run --release --example make_toy -- /tmp/toy`

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vqsep::data::{make_toy_corpus, sample_example, Manifest, SilencePolicy, StemPool, MAX_EXTRA_STEMS};

fn main() -> vqsep::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("vqsep_toy"));
    let files = make_toy_corpus(&out, 0)?;
    println!("wrote {} stems under {}", files.len(), out.display());

    let manifest = Manifest::ingest(&out)?;
    println!("classes: {}", manifest.labels().join(", "));
    let pool = StemPool::load(&manifest)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..4 {
        let ex = sample_example(&pool, &mut rng, MAX_EXTRA_STEMS, &SilencePolicy::default())?;
        println!(
            "target {:?} + {} extra stems: mix rms {:.3}, target rms {:.3}",
            pool.label(ex.stem).unwrap_or("?"),
            ex.k,
            ex.x_mix.rms(),
            ex.x_targ.rms()
        );
    }
    Ok(())
}
