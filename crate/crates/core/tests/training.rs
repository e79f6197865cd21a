use corelnet::models::{HeadKind, ModelConfig};
use corelnet::tasks::{TaskConfig, TaskKind};
use corelnet::training::{train_run, OptimizerChoice, RunStatus, TrainConfig};

fn model(head: HeadKind, task: &TaskConfig) -> ModelConfig {
    ModelConfig {
        image_size: 16,
        conv_layers: 2,
        conv_channels: 8,
        enc_hidden: 32,
        embed_dim: 16,
        decoder_hidden: 32,
        t_dim: 32,
        t_heads: 2,
        t_query: 4,
        t_pos: 4,
        t_ff: 32,
        tf_heads: 2,
        tf_ff: 32,
        lstm_hidden: 16,
        ..ModelConfig::new(head, task.seq_len(), task.num_classes())
    }
}

fn short(iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig { iterations, eval_every: iterations, eval_episodes: 128, curve_episodes: 32, ..TrainConfig::cognitive(seed) }
}

#[test]
fn same_seed_reproduces_the_whole_run() {
    let task = TaskConfig { image_size: 16, m: 50, ..TaskConfig::new(TaskKind::Rmts) };
    for head in HeadKind::ALL {
        let cfg = model(head, &task);
        let a = train_run(&cfg, &task, &short(6, 3)).unwrap();
        let b = train_run(&cfg, &task, &short(6, 3)).unwrap();
        assert_eq!(a.losses, b.losses, "{head}");
        assert_eq!(a.curve, b.curve, "{head}");
        assert_eq!(a.final_test_accuracy, b.final_test_accuracy, "{head}");
        assert_eq!(a.encoder_checksum_end, b.encoder_checksum_end, "{head}");
        let c = train_run(&cfg, &task, &short(6, 4)).unwrap();
        assert_ne!(a.losses, c.losses, "{head}: seed has no effect");
    }
}

#[test]
fn corelnet_learns_same_different_from_scratch() {
    let task = TaskConfig { image_size: 16, m: 50, ..TaskConfig::new(TaskKind::SameDiff) };
    let r = train_run(&model(HeadKind::Corelnet, &task), &task, &short(300, 0)).unwrap();
    assert!(r.status.is_ok());
    assert!(r.loss_decreased());
    assert!(r.test_accuracy() > 0.8, "held-out accuracy {}", r.test_accuracy());
}

#[test]
fn divergent_runs_are_reported_not_dropped() {
    let task = TaskConfig { image_size: 16, ..TaskConfig::new(TaskKind::Rmts) };
    let train = TrainConfig { lr: 1e12, optimizer: OptimizerChoice::Sgd, clip_norm: None, ..short(20, 0) };
    let r = train_run(&model(HeadKind::Corelnet, &task), &task, &train).unwrap();
    assert!(matches!(r.status, RunStatus::Failed(_)), "{:?}", r.status);
    assert!(!r.final_test_accuracy.is_empty());
}

#[test]
fn mismatched_model_and_task_are_rejected() {
    let task = TaskConfig { image_size: 16, ..TaskConfig::new(TaskKind::Rmts) };
    let other = TaskConfig { image_size: 16, ..TaskConfig::new(TaskKind::SameDiff) };
    assert!(train_run(&model(HeadKind::Corelnet, &other), &task, &short(1, 0)).is_err());
}
