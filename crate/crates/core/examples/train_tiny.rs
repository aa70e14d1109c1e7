//! A short training run of the tiny configuration on the toy corpus,
//! checkpointed and resumed halfway.
//!
//! `cargo run --release --example train_tiny`

use std::sync::Arc;

use vqsep::data::{make_toy_corpus, Manifest, StemPool};
use vqsep::trainer::{Archive, Session, TrainConfig};

fn main() -> vqsep::Result<()> {
    let dir = tempfile::tempdir()?;
    let data = dir.path().join("toy");
    make_toy_corpus(&data, 0)?;
    let pool = Arc::new(StemPool::load(&Manifest::ingest(&data)?)?);

    let config = TrainConfig {
        dataset: Some(data),
        batch_size: 8,
        total_steps: 10,
        checkpoint_every: 5,
        ..TrainConfig::tiny()
    };
    let run = dir.path().join("run");
    let mut session = Session::initialize(config, Arc::clone(&pool))?;
    session.config.total_steps = 5;
    session.fit(&run, |r| println!("step {} rec {:.3} adv_d {:.3}", r.step, r.losses.rec, r.losses.adv_d))?;

    let archive = Archive::load(&run.join("checkpoints").join("step_00000005.ckpt"))?;
    let mut resumed = Session::from_archive(&archive, pool)?;
    resumed.config.total_steps = 10;
    resumed.fit(&run, |r| println!("resumed step {} rec {:.3}", r.step, r.losses.rec))?;
    println!("codebook perplexity by step is in {}", run.join("train_log.csv").display());
    Ok(())
}
