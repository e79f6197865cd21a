//! A small ablation matrix: similarity mode × encoder mode on RMTS, with a
//! results table and per-arm CSV written under the output directory.
//!
//! cargo run --release -p corelnet --example ablation_sweep -- [out_dir] [iterations]

use std::path::PathBuf;

use corelnet::harness::{emit_report, run_matrix, ExperimentMatrix, ReportKind, Settings};

fn main() -> corelnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "sweep".into()));
    let iterations = args.next().unwrap_or_else(|| "300".into());
    let settings = Settings::parse(
        "profile = fast
         task = rmts
         m = 50
         eval_episodes = 500
         sweep.similarity = symmetric, asymmetric
         sweep.encoder = learned, random
         seeds = 0..3",
    )?
    .with("iterations", &iterations)?;
    let matrix = ExperimentMatrix::from_settings(&settings, out)?;
    let outcome = run_matrix(&matrix, |line| eprintln!("{line}"))?;
    println!("{} cells ({} trained, {} cached)", outcome.reports.len(), outcome.trained, outcome.reused);
    for path in emit_report(&outcome.reports, ReportKind::Table, &outcome.dir)? {
        print!("{}", std::fs::read_to_string(&path)?);
    }
    Ok(())
}
