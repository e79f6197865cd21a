use corelnet_autograd::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{family} family holds {capacity} shapes, {requested} requested")]
    GlyphCapacity { family: &'static str, capacity: usize, requested: usize },
    #[error("render: {0}")]
    Render(String),
    #[error("holdout m = {m} leaves fewer than the {k_min} training shapes {task} needs (n = {n})")]
    HoldoutTooLarge { task: String, m: usize, n: usize, k_min: usize },
    #[error("task {task}: {msg}")]
    Task { task: String, msg: String },
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("model: {0}")]
    Model(String),
    #[error("config: {0}")]
    Config(String),
    #[error("dataset format: {0}")]
    Format(String),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn task_err(task: impl std::fmt::Display, msg: impl Into<String>) -> Error {
    Error::Task { task: task.to_string(), msg: msg.into() }
}
