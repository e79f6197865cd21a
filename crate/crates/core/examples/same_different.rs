//! Train CoRelNet on same/different with most shapes held out.
//!
//! cargo run --release -p corelnet --example same_different -- [iterations] [m] [seed] [model] [similarity]

use corelnet::models::{HeadKind, ModelConfig, SimilarityMode};
use corelnet::tasks::{TaskConfig, TaskKind};
use corelnet::training::{train_model, TrainConfig};

fn main() -> corelnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let iterations: usize = arg(0, "1000").parse().expect("iterations");
    let m: usize = arg(1, "95").parse().expect("m");
    let seed: u64 = arg(2, "0").parse().expect("seed");
    let head: HeadKind = arg(3, "corelnet").parse()?;
    let similarity: SimilarityMode = arg(4, "symmetric").parse()?;

    let task = TaskConfig { m, split_seed: seed, ..TaskConfig::new(TaskKind::SameDiff) };
    let model = ModelConfig { similarity, ..ModelConfig::new(head, task.seq_len(), task.num_classes()) };
    let train = TrainConfig { iterations, eval_every: 100, ..TrainConfig::cognitive(seed) };
    let run = train_model(&model, &task, &train, |p| {
        println!("iter {:>5}  train {:.3}  test {:?}", p.iteration, p.train_accuracy, p.test_accuracy);
    })?;
    let r = &run.report;
    println!(
        "{} on {} (m = {m}): test accuracy {:.3}, {:.1}s, {} parameters",
        r.model.head, r.task.kind, r.test_accuracy(), r.wall_seconds, r.param_count
    );
    Ok(())
}
