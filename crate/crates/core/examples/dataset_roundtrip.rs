//! Freezes a test set to disk, reads it back and relabels it with the oracle.
//!
//! cargo run --release -p corelnet --example dataset_roundtrip -- [task] [count] [path]

use corelnet::harness::{export_dataset, import_dataset};
use corelnet::tasks::{oracle_label, Phase, TaskConfig, TaskKind, TestSet};

fn main() -> corelnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: TaskKind = args.next().unwrap_or_else(|| "identity_rules".into()).parse()?;
    let count: usize = args.next().map_or(1000, |s| s.parse().expect("count"));
    let path = args.next().unwrap_or_else(|| format!("{kind}.crnl"));

    let (cfg, phase) = if kind.is_game() {
        (TaskConfig::new(kind), Phase::Test(TestSet::Hexomino))
    } else {
        (TaskConfig { m: 50, ..TaskConfig::new(kind) }, Phase::Test(TestSet::Heldout))
    };
    let written = export_dataset(&cfg, phase, count, 7, path.as_ref())?;
    let read = import_dataset(path.as_ref())?;
    assert_eq!(read.episodes, written.episodes);
    let agree = read.episodes.iter().filter(|ep| oracle_label(ep).ok() == Some(ep.label)).count();
    let bytes = std::fs::metadata(&path)?.len();
    println!("{path}: {} episodes of {}x{}, {bytes} bytes, oracle agrees on {agree}", read.episodes.len(), read.height, read.width);
    Ok(())
}
