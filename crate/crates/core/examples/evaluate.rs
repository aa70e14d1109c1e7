//! The evaluation harness run against the oracle extractor, which returns
//! the true target: L1_target is exactly zero and every reference lands in
//! code 0. Writes the CSV and PNG reports.
//!
//! `cargo run --release --example evaluate -- /tmp/report`

use std::path::PathBuf;

use vqsep::data::{make_toy_corpus, Manifest, SilencePolicy, StemPool};
use vqsep::evalsuite::{build_trials, eval_clusters, eval_l1, export_reports, OracleExtractor, K_EVAL};

fn main() -> vqsep::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("vqsep_report"));
    let dir = tempfile::tempdir()?;
    make_toy_corpus(dir.path(), 1)?;
    let pool = StemPool::load(&Manifest::ingest(dir.path())?)?;

    let oracle = OracleExtractor { codes: 8 };
    let trials = build_trials(&pool, oracle.codes, K_EVAL, 0, &SilencePolicy::default())?;
    let table = eval_l1(&trials, &oracle)?;
    let hist = eval_clusters(&trials, &oracle)?;
    for (c, class) in table.classes.iter().enumerate() {
        println!(
            "{class:12} n {:3} L1 target {:.3} random {:.3} purity {:.2}",
            table.counts[c], table.l1_target[c], table.l1_random[c], hist.purity(c)
        );
    }
    let outputs = vec![trials[0].target.clone(); oracle.codes];
    let paths = export_reports(&out, &table, &hist, Some((&trials[0].mix, &outputs)))?;
    println!("wrote {} and {}", paths.table_csv.display(), paths.clusters_png.display());
    Ok(())
}
