//! Trains CoRelNet on RMTS and prints the relation matrix R for a few held-out episodes.
//!
//! cargo run --release -p corelnet --example relation_matrix -- [iterations]

use corelnet::models::{images_tensor, HeadKind, ModelConfig};
use corelnet::tasks::{Generator, Phase, TaskConfig, TaskKind, TestSet};
use corelnet::training::{train_model, TrainConfig};
use corelnet_autograd::Graph;

fn main() -> corelnet::Result<()> {
    let iterations: usize = std::env::args().nth(1).map_or(400, |s| s.parse().expect("iterations"));
    let task = TaskConfig { image_size: 16, m: 50, ..TaskConfig::new(TaskKind::Rmts) };
    let model = ModelConfig { image_size: 16, conv_layers: 2, ..ModelConfig::new(HeadKind::Corelnet, 6, 2) };
    let train = TrainConfig { iterations, eval_every: iterations, eval_episodes: 500, ..TrainConfig::cognitive(0) };
    let run = train_model(&model, &task, &train, |_| {})?;
    println!("held-out accuracy {:.3}\n", run.report.test_accuracy());

    let gen = Generator::new(task)?;
    for ep in gen.batch(Phase::Test(TestSet::Heldout), 1, 0, 3)? {
        let mut g = Graph::inference();
        let x = g.input(images_tensor(std::slice::from_ref(&ep))?);
        let fw = run.model.forward(&mut g, x, 1)?;
        let r = g.value(fw.r.expect("relational head")).data().to_vec();
        println!("pattern {}  label {}  logits {:?}", ep.meta.pattern, ep.label, g.value(fw.logits).data());
        for row in r.chunks(6) {
            println!("  {}", row.iter().map(|v| format!("{v:5.2}")).collect::<Vec<_>>().join(" "));
        }
        println!();
    }
    Ok(())
}
