//! Trains every model head briefly on one task and compares held-out accuracy.
//!
//! cargo run --release -p corelnet --example head_comparison -- [task] [iterations] [m]

use corelnet::models::{HeadKind, ModelConfig};
use corelnet::tasks::{TaskConfig, TaskKind};
use corelnet::training::{train_run, TrainConfig};

fn main() -> corelnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: TaskKind = args.next().unwrap_or_else(|| "rmts".into()).parse()?;
    let iterations: usize = args.next().map_or(500, |s| s.parse().expect("iterations"));
    let m: usize = args.next().map_or(50, |s| s.parse().expect("m"));

    let task = TaskConfig { image_size: 16, m, ..TaskConfig::new(kind) };
    let train = TrainConfig { iterations, eval_every: iterations, eval_episodes: 1000, ..TrainConfig::cognitive(0) };
    println!("{kind}, m = {m}, {iterations} iterations");
    for head in HeadKind::ALL {
        let model = ModelConfig { image_size: 16, conv_layers: 2, ..ModelConfig::new(head, task.seq_len(), task.num_classes()) };
        let r = train_run(&model, &task, &train)?;
        println!(
            "{:<12} test {:.3}  train {:.3}  {:>8} params  {:.0}s",
            head.name(),
            r.test_accuracy(),
            r.final_train_accuracy,
            r.param_count,
            r.wall_seconds
        );
    }
    Ok(())
}
