//! Trains the tiny model on the synthetic toy corpus and reports the
//! clustering, L1 and absent-class metrics at intervals.
//!
//! `cargo run --release --example toy_experiment -- --steps 2000 --eval-every 500`

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::Parser;
use vqsep::data::{make_toy_corpus, Manifest, StemPool};
use vqsep::evalsuite::{build_trials, eval_absent, eval_clusters, eval_l1, K_EVAL};
use vqsep::trainer::{Session, TrainConfig};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 2000)]
    steps: u64,
    #[arg(long, default_value_t = 500)]
    eval_every: u64,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Discriminator learning rate; defaults to `--lr`.
    #[arg(long)]
    lr_d: Option<f64>,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

fn main() -> vqsep::Result<()> {
    env_logger::init();
    let args = Args::parse();
    let tmp = tempfile::tempdir()?;
    let root = args.work_dir.clone().unwrap_or_else(|| tmp.path().to_path_buf());
    let (train_dir, test_dir) = (root.join("toy_train"), root.join("toy_test"));
    if !train_dir.exists() {
        make_toy_corpus(&train_dir, 0)?;
        make_toy_corpus(&test_dir, 1)?;
    }
    let train = Arc::new(StemPool::load(&Manifest::ingest(&train_dir)?)?);
    let test = StemPool::load(&Manifest::ingest(&test_dir)?)?;

    let config = TrainConfig {
        dataset: Some(train_dir.clone()),
        batch_size: args.batch,
        lr_g: args.lr,
        lr_d: args.lr_d.unwrap_or(args.lr),
        total_steps: args.steps,
        seed: args.seed,
        ..TrainConfig::tiny()
    };
    let policy = config.silence();
    let mut session = Session::initialize(config, train)?;
    let start = Instant::now();
    while session.step < args.steps {
        let r = session.step_once()?;
        if r.step % 25 == 0 {
            let l = &r.losses;
            println!(
                "step {} rec {:.3} adv_g {:.3} adv_d {:.3} vq {:.4} ppl {:.2} ({:.0}s)",
                r.step, l.rec, l.adv_g, l.adv_d, l.vq, r.usage.perplexity, start.elapsed().as_secs_f64()
            );
        }
        if r.step % args.eval_every == 0 || r.step == args.steps {
            let model = &session.model;
            let trials = build_trials(&test, model.codebook.size(), K_EVAL, 7, &policy)?;
            let h = eval_clusters(&trials, model)?;
            let table = eval_l1(&trials, model)?;
            let absent = eval_absent(&test, &h, model, 50, 9, &policy)?;
            let quiet = absent.iter().filter(|t| t.attenuation_db() >= 10.0).count();
            println!("== eval at step {}", r.step);
            for (c, class) in h.classes.iter().enumerate() {
                println!(
                    "  {class:12} purity {:.2} (code {}) L1 target {:.3} random {:.3}",
                    h.purity(c),
                    h.dominant_code(c),
                    table.l1_target[c],
                    table.l1_random[c]
                );
            }
            println!("  counts {:?}", h.counts);
            let outs: Vec<_> = (0..model.codebook.size())
                .map(|i| model.render_entry(&trials[0].mix, i))
                .collect::<vqsep::Result<_>>()?;
            let spread: Vec<String> = outs[1..]
                .iter()
                .map(|o| format!("{:.3}", vqsep::objectives::log_spectral_l1(&outs[0], o).unwrap()))
                .collect();
            println!("  code spread (L1 vs code 0): {}", spread.join(" "));
            let mean_att = absent.iter().map(|t| t.attenuation_db()).sum::<f64>() / absent.len() as f64;
            println!("  absent: {quiet}/50 at >= 10 dB, mean attenuation {mean_att:.1} dB");
        }
    }
    Ok(())
}
