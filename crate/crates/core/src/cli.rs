//! Command-line front end: corpus generation, training, separation,
//! evaluation and codebook inspection.
//!
//! Every path is resolved against `--run-dir`. Training reads a TOML config
//! whose keys may be overridden by flags, and every command records the
//! parameters it ran with next to its outputs. Exit codes: 0 on success, 1
//! when the input or configuration is rejected, 2 when the work itself
//! fails.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::data::{make_toy_corpus, Manifest, SilencePolicy, StemPool};
use crate::dsp::wav::read_wav;
use crate::evalsuite::{build_trials, eval_absent, eval_clusters, eval_l1, export_reports, K_EVAL};
use crate::separator::separate;
use crate::trainer::{load_model, Archive, NetworkPreset, Session, TrainConfig};
use crate::{Error, Result};

/// File name of the resolved training config inside the run directory.
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
/// File name of the parameter record written by the other commands.
pub const RUN_RECORD: &str = "run.json";

#[derive(Debug, Parser)]
#[command(name = "vqsep", version, about = "Query-free music source separation with a quantized style space")]
pub struct Cli {
    /// Directory every relative path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub run_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic four-class toy corpus.
    MakeToy {
        #[arg(long, default_value = "toy")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a config file; flags override its keys.
    Train(TrainArgs),
    /// Render a mixture under every codebook entry.
    Separate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "separated")]
        out: PathBuf,
    },
    /// Per-class L1 table, cluster histogram and spectrogram grid.
    Eval {
        /// Labelled stems, one subdirectory per class.
        #[arg(long)]
        test_dir: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "eval_report")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = K_EVAL)]
        k_eval: usize,
        /// Absent-class probes to run.
        #[arg(long, default_value_t = 50)]
        absent_trials: usize,
    },
    /// Print codebook entries, EMA sizes and pairwise cosine similarities.
    Codebook {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_preset)]
    pub network: Option<NetworkPreset>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub total_steps: Option<u64>,
    #[arg(long)]
    pub lr_g: Option<f64>,
    #[arg(long)]
    pub lr_d: Option<f64>,
    #[arg(long)]
    pub codebook_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

fn parse_preset(s: &str) -> std::result::Result<NetworkPreset, String> {
    match s {
        "full" => Ok(NetworkPreset::Full),
        "tiny" => Ok(NetworkPreset::Tiny),
        other => Err(format!("unknown network preset {other:?} (expected full or tiny)")),
    }
}

impl TrainArgs {
    fn apply(&self, c: &mut TrainConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    c.$field = v.clone().into();
                }
            )*};
        }
        set!(dataset, network, batch_size, micro_batch, total_steps, lr_g, lr_d, codebook_size, seed, checkpoint_every);
    }
}

/// Exit status for an error: 1 for rejected input, 2 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::SampleRate { .. } => 1,
        _ => 2,
    }
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let dir = &cli.run_dir;
    match &cli.command {
        Command::MakeToy { out, seed } => cmd_make_toy(dir, out, *seed),
        Command::Train(args) => cmd_train(dir, args),
        Command::Separate {
            input,
            checkpoint,
            out,
        } => cmd_separate(dir, input, checkpoint, out),
        Command::Eval {
            test_dir,
            checkpoint,
            out,
            seed,
            k_eval,
            absent_trials,
        } => cmd_eval(dir, test_dir, checkpoint, out, *seed, *k_eval, *absent_trials),
        Command::Codebook { checkpoint, json } => cmd_codebook(dir, checkpoint, *json),
    }
}

fn existing(run_dir: &Path, path: &Path, what: &str) -> Result<PathBuf> {
    let p = run_dir.join(path);
    if !p.exists() {
        return Err(Error::Config(format!("{what}: {} does not exist", p.display())));
    }
    Ok(p)
}

fn record(out: &Path, params: &impl Serialize) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(RUN_RECORD), serde_json::to_string_pretty(params)?)?;
    Ok(())
}

pub fn cmd_make_toy(run_dir: &Path, out: &Path, seed: u64) -> Result<()> {
    let out = run_dir.join(out);
    let files = make_toy_corpus(&out, seed)?;
    record(&out, &serde_json::json!({"command": "make-toy", "seed": seed, "files": files.len()}))?;
    println!("wrote {} stems to {}", files.len(), out.display());
    Ok(())
}

pub fn cmd_train(run_dir: &Path, args: &TrainArgs) -> Result<()> {
    let (mut session, resumed) = match &args.resume {
        Some(ckpt) => {
            let archive = Archive::load(&existing(run_dir, ckpt, "resume")?)?;
            let config: TrainConfig = serde_json::from_value(archive.meta["config"].clone())
                .map_err(|e| Error::Checkpoint(format!("bad session metadata: {e}")))?;
            let pool = load_pool(run_dir, &config)?;
            let mut session = Session::from_archive(&archive, pool)?;
            // Only the step budget and checkpoint cadence may change on resume.
            if let Some(n) = args.total_steps {
                session.config.total_steps = n;
            }
            if let Some(n) = args.checkpoint_every {
                session.config.checkpoint_every = n;
            }
            session.config.validate()?;
            (session, true)
        }
        None => {
            let mut config = match &args.config {
                Some(path) => TrainConfig::load(&existing(run_dir, path, "config")?)?,
                None => TrainConfig::default(),
            };
            args.apply(&mut config);
            config.validate()?;
            let pool = load_pool(run_dir, &config)?;
            (Session::initialize(config, pool)?, false)
        }
    };
    fs::create_dir_all(run_dir)?;
    fs::write(run_dir.join(RESOLVED_CONFIG), session.config.to_toml())?;
    info!(
        "{} training at step {} of {}",
        if resumed { "resuming" } else { "starting" },
        session.step,
        session.config.total_steps
    );
    session.fit(run_dir, |_| {})?;
    println!("finished at step {}", session.step);
    Ok(())
}

fn load_pool(run_dir: &Path, config: &TrainConfig) -> Result<Arc<StemPool>> {
    let dataset = config.dataset_path(run_dir)?;
    if !dataset.is_dir() {
        return Err(Error::Config(format!("dataset: {} is not a directory", dataset.display())));
    }
    let manifest = Manifest::ingest_cached(&dataset, &run_dir.join("manifest.json"))?;
    if manifest.is_empty() {
        return Err(Error::Config(format!("dataset: no usable stems in {}", dataset.display())));
    }
    Ok(Arc::new(StemPool::load(&manifest)?))
}

pub fn cmd_separate(run_dir: &Path, input: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let input = existing(run_dir, input, "input")?;
    let checkpoint = existing(run_dir, checkpoint, "checkpoint")?;
    let mix = read_wav(&input).map_err(|e| match e {
        e @ Error::SampleRate { .. } => e,
        Error::Wav { path, source } => Error::Config(format!("input {}: {source}", path.display())),
        e => e,
    })?;
    let (model, _) = load_model(&checkpoint)?;
    let result = separate(&mix, &model)?;
    let out = run_dir.join(out);
    let paths = result.write(&out)?;
    record(
        &out,
        &serde_json::json!({"command": "separate", "input": input, "checkpoint": checkpoint, "sources": paths.len()}),
    )?;
    println!("wrote {} sources to {}", paths.len(), out.display());
    Ok(())
}

pub fn cmd_eval(
    run_dir: &Path,
    test_dir: &Path,
    checkpoint: &Path,
    out: &Path,
    seed: u64,
    k_eval: usize,
    absent_trials: usize,
) -> Result<()> {
    let test_dir = existing(run_dir, test_dir, "test_dir")?;
    let checkpoint = existing(run_dir, checkpoint, "checkpoint")?;
    let (model, config) = load_model(&checkpoint)?;
    let manifest = Manifest::ingest(&test_dir)?;
    if manifest.records.iter().all(|r| r.label.is_none()) {
        return Err(Error::Config(format!(
            "test_dir: {} holds no labelled stems (expected one subdirectory per class)",
            test_dir.display()
        )));
    }
    let pool = StemPool::load(&manifest)?;
    let policy = SilencePolicy {
        threshold_dbfs: config.silence_dbfs,
    };
    let trials = build_trials(&pool, model.codebook.size(), k_eval, seed, &policy)?;
    if trials.is_empty() {
        return Err(Error::Empty("no usable test items".into()));
    }
    let table = eval_l1(&trials, &model)?;
    let histogram = eval_clusters(&trials, &model)?;
    let absent = if histogram.classes.len() >= 3 && absent_trials > 0 {
        eval_absent(&pool, &histogram, &model, absent_trials, seed, &policy)?
    } else {
        Vec::new()
    };
    let example = separate(&trials[0].mix, &model)?;
    let out = run_dir.join(out);
    let paths = export_reports(&out, &table, &histogram, Some((&trials[0].mix, &example.sources)))?;
    let purity: Vec<f64> = (0..histogram.classes.len()).map(|c| histogram.purity(c)).collect();
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "table": table,
            "histogram": histogram,
            "purity": purity,
            "absent": absent,
        }))?,
    )?;
    record(
        &out,
        &serde_json::json!({
            "command": "eval", "test_dir": test_dir, "checkpoint": checkpoint,
            "seed": seed, "k_eval": k_eval, "absent_trials": absent_trials,
        }),
    )?;
    println!("{:<14}{:>12}{:>12}{:>8}", "class", "l1_target", "l1_random", "purity");
    for (c, class) in table.classes.iter().enumerate() {
        println!(
            "{class:<14}{:>12.4}{:>12.4}{:>8.2}",
            table.l1_target[c], table.l1_random[c], purity[c]
        );
    }
    println!("reports in {}", paths.table_csv.parent().unwrap_or(&out).display());
    Ok(())
}

pub fn cmd_codebook(run_dir: &Path, checkpoint: &Path, json: bool) -> Result<()> {
    let checkpoint = existing(run_dir, checkpoint, "checkpoint")?;
    let (model, _) = load_model(&checkpoint)?;
    let cb = &model.codebook;
    let cosine = cb.cosine_matrix();
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&serde_json::json!({
                "entries": (0..cb.size()).map(|i| cb.entry(i)).collect::<Vec<_>>(),
                "ema_cluster_size": cb.ema_cluster_size(),
                "cosine": cosine.chunks(cb.size()).collect::<Vec<_>>(),
            }))?
        );
        return Ok(());
    }
    println!("{:>4} {:>12} {:>10}  entry", "code", "ema_size", "norm");
    for i in 0..cb.size() {
        let e = cb.entry(i);
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values: Vec<String> = e.iter().map(|v| format!("{v:+.3}")).collect();
        println!("{i:>4} {:>12.4} {norm:>10.7}  {}", cb.ema_cluster_size()[i], values.join(" "));
    }
    println!("\npairwise cosine similarity");
    for row in cosine.chunks(cb.size()) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:+.2}")).collect();
        println!("{}", cells.join(" "));
    }
    Ok(())
}
