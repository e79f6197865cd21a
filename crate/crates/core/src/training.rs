//! Loss, the online training loop, evaluation and run reports.

use std::collections::BTreeMap;
use std::time::Instant;

use corelnet_autograd::{Graph, Optimizer, OptimizerKind, Real, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{images_tensor, Model, ModelConfig};
use crate::tasks::{mix, Episode, Generator, Phase, TaskConfig, TestSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    Adam,
    Sgd,
}

impl From<OptimizerChoice> for OptimizerKind {
    fn from(o: OptimizerChoice) -> Self {
        match o {
            OptimizerChoice::Adam => OptimizerKind::Adam,
            OptimizerChoice::Sgd => OptimizerKind::Sgd,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerChoice,
    pub seed: u64,
    pub l1_lambda: f64,
    pub eval_every: usize,
    /// Episodes per test set for the final evaluation.
    pub eval_episodes: usize,
    /// Episodes per test set at intermediate evaluation points.
    pub curve_episodes: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub test_sets: Vec<TestSet>,
}

impl TrainConfig {
    /// Defaults for the cognitive tasks (5000 iterations).
    pub fn cognitive(seed: u64) -> Self {
        Self {
            iterations: 5000,
            batch_size: 32,
            lr: 5e-4,
            optimizer: OptimizerChoice::Adam,
            seed,
            l1_lambda: 0.0,
            eval_every: 250,
            eval_episodes: 2000,
            curve_episodes: 256,
            clip_norm: Some(10.0),
            test_sets: vec![TestSet::Heldout],
        }
    }

    /// Defaults for the grid games (2500 iterations, both held-out families).
    pub fn games(seed: u64) -> Self {
        Self { iterations: 2500, test_sets: vec![TestSet::Hexomino, TestSet::Stripe], ..Self::cognitive(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch size must be at least 1".into()));
        }
        if !(self.l1_lambda >= 0.0) {
            return Err(Error::Config(format!("l1 lambda {} must be nonnegative", self.l1_lambda)));
        }
        if self.eval_episodes == 0 || self.test_sets.is_empty() {
            return Err(Error::Config("evaluation needs episodes and a test set".into()));
        }
        Ok(())
    }
}

/// Cross-entropy plus `λ` times the per-example L1 penalty.
pub fn loss<F: Real>(g: &mut Graph<F>, logits: Var, labels: &[usize], l1: Option<Var>, lambda: f64) -> Result<Var> {
    if g.shape(logits).len() != 2 || g.shape(logits)[1] < 2 {
        return Err(Error::Config(format!("logits {:?} need at least two classes", g.shape(logits))));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("l1 lambda {lambda} must be nonnegative")));
    }
    let ce = g.cross_entropy(logits, labels)?;
    match l1 {
        Some(pen) if lambda > 0.0 => {
            let w = g.scale(pen, lambda)?;
            Ok(g.add(ce, w)?)
        }
        _ => Ok(ce),
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `[N, K]` logits whose argmax equals the label.
pub fn accuracy<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> Result<f64> {
    let s = logits.shape();
    if labels.is_empty() || s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Config(format!("accuracy over {} labels with logits {s:?}", labels.len())));
    }
    let k = s[1];
    let hits = labels.iter().enumerate().filter(|&(i, &l)| argmax(&logits.data()[i * k..(i + 1) * k]) == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub const EVAL_CHUNK: usize = 64;

/// Accuracy of `model` over `episodes`, computed without a gradient tape.
pub fn evaluate<F: Real>(model: &Model<F>, episodes: &[Episode]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut hits = 0.0;
    for chunk in episodes.chunks(EVAL_CHUNK) {
        let logits = model.predict(chunk)?;
        let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        hits += accuracy(&logits, &labels)? * chunk.len() as f64;
    }
    Ok(hits / episodes.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iteration: usize,
    pub train_accuracy: f64,
    /// Keyed by test-set name.
    pub test_accuracy: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum RunStatus {
    Ok,
    Failed(String),
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub curve: Vec<EvalPoint>,
    /// Training loss at every iteration.
    pub losses: Vec<f64>,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: BTreeMap<String, f64>,
    pub wall_seconds: f64,
    pub param_count: usize,
    pub trainable_params: usize,
    pub encoder_checksum_start: u64,
    pub encoder_checksum_end: u64,
    pub status: RunStatus,
}

impl RunReport {
    /// Final accuracy on the first configured test set.
    pub fn test_accuracy(&self) -> f64 {
        self.train.test_sets.first().and_then(|t| self.final_test_accuracy.get(t.name())).copied().unwrap_or(f64::NAN)
    }

    pub fn test_accuracy_on(&self, set: TestSet) -> Option<f64> {
        self.final_test_accuracy.get(set.name()).copied()
    }

    /// Median loss over the last tenth of training versus the first tenth.
    pub fn loss_decreased(&self) -> bool {
        let n = self.losses.len();
        if n < 10 {
            return false;
        }
        let k = n / 10;
        median(&self.losses[n - k..]) < median(&self.losses[..k])
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Seed streams derived from the run seed. Evaluation never shares a stream with training.
pub mod seeds {
    use super::mix;

    pub fn model(seed: u64) -> u64 {
        mix(seed, 0x1001)
    }

    pub fn train_episodes(seed: u64) -> u64 {
        mix(seed, 0x2002)
    }

    pub fn train_eval(seed: u64) -> u64 {
        mix(seed, 0x3003)
    }

    pub fn test_eval(seed: u64) -> u64 {
        mix(seed, 0x4004)
    }
}

/// A trained model together with its report.
pub struct TrainedRun {
    pub model: Model<f32>,
    pub report: RunReport,
}

/// Trains one model from scratch and evaluates it.
pub fn train_run(model_cfg: &ModelConfig, task_cfg: &TaskConfig, cfg: &TrainConfig) -> Result<RunReport> {
    Ok(train_model(model_cfg, task_cfg, cfg, |_| {})?.report)
}

/// As [`train_run`], also returning the model; `progress` sees each evaluation point.
pub fn train_model(
    model_cfg: &ModelConfig,
    task_cfg: &TaskConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EvalPoint),
) -> Result<TrainedRun> {
    cfg.validate()?;
    let start = Instant::now();
    if model_cfg.seq_len != task_cfg.seq_len() || model_cfg.num_classes != task_cfg.num_classes() {
        return Err(Error::Config(format!(
            "model expects T = {}, {} classes; task {} has T = {}, {} classes",
            model_cfg.seq_len,
            model_cfg.num_classes,
            task_cfg.kind,
            task_cfg.seq_len(),
            task_cfg.num_classes()
        )));
    }
    if model_cfg.image_size != task_cfg.cell_size() {
        return Err(Error::Config(format!(
            "model images are {}px, task renders {}px",
            model_cfg.image_size,
            task_cfg.cell_size()
        )));
    }
    let gen = Generator::new(task_cfg.clone())?;
    let mut model = Model::<f32>::new(model_cfg.clone(), seeds::model(cfg.seed))?;
    let mut opt = Optimizer::new(cfg.optimizer.into(), cfg.lr)?;

    let train_eval = gen.batch(Phase::Train, seeds::train_eval(cfg.seed), 0, cfg.eval_episodes)?;
    let mut test_eval = Vec::with_capacity(cfg.test_sets.len());
    for &set in &cfg.test_sets {
        test_eval.push((set, gen.batch(Phase::Test(set), seeds::test_eval(cfg.seed), 0, cfg.eval_episodes)?));
    }
    let eval_at = |model: &Model<f32>, iteration: usize, n: usize| -> Result<EvalPoint> {
        let n = n.min(cfg.eval_episodes);
        let mut test_accuracy = BTreeMap::new();
        for (set, eps) in &test_eval {
            test_accuracy.insert(set.name().to_string(), evaluate(model, &eps[..n])?);
        }
        Ok(EvalPoint { iteration, train_accuracy: evaluate(model, &train_eval[..n])?, test_accuracy })
    };

    let checksum_start = model.encoder_checksum();
    let train_seed = seeds::train_episodes(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut curve = Vec::new();
    let mut status = RunStatus::Ok;
    for it in 0..cfg.iterations {
        let batch = gen.batch(Phase::Train, train_seed, (it * cfg.batch_size) as u64, cfg.batch_size)?;
        match step(&mut model, &mut opt, &batch, cfg) {
            Ok(l) => losses.push(l),
            Err(e) => {
                status = RunStatus::Failed(format!("iteration {it}: {e}"));
                break;
            }
        }
        let done = it + 1;
        if done % cfg.eval_every == 0 && done < cfg.iterations {
            let p = eval_at(&model, done, cfg.curve_episodes)?;
            progress(&p);
            curve.push(p);
        }
    }
    let last = match eval_at(&model, losses.len(), cfg.eval_episodes) {
        Ok(p) => p,
        // Non-finite parameters make no valid prediction: every episode counts as wrong.
        Err(Error::Tensor(TensorError::NonFinite { .. })) if !status.is_ok() => EvalPoint {
            iteration: losses.len(),
            train_accuracy: 0.0,
            test_accuracy: cfg.test_sets.iter().map(|s| (s.name().to_string(), 0.0)).collect(),
        },
        Err(e) => return Err(e),
    };
    progress(&last);
    let report = RunReport {
        task: task_cfg.clone(),
        model: model_cfg.clone(),
        train: cfg.clone(),
        seed: cfg.seed,
        final_train_accuracy: last.train_accuracy,
        final_test_accuracy: last.test_accuracy.clone(),
        curve: {
            curve.push(last);
            curve
        },
        losses,
        wall_seconds: start.elapsed().as_secs_f64(),
        param_count: model.param_count(false),
        trainable_params: model.param_count(true),
        encoder_checksum_start: checksum_start,
        encoder_checksum_end: model.encoder_checksum(),
        status,
    };
    Ok(TrainedRun { model, report })
}

/// One optimizer step on a batch; returns the loss. Non-finite values abort with an error.
fn step(model: &mut Model<f32>, opt: &mut Optimizer, batch: &[Episode], cfg: &TrainConfig) -> Result<f64> {
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let mut g = Graph::new();
    let x = g.input(images_tensor(batch)?);
    let fw = model.forward(&mut g, x, batch.len())?;
    let l = loss(&mut g, fw.logits, &labels, fw.l1, cfg.l1_lambda)?;
    let value = g.value(l).item().as_f64();
    if !value.is_finite() {
        return Err(Error::Tensor(TensorError::NonFinite { op: "loss", node: l.index() }));
    }
    let grads = g.backward(l)?;
    model.store.zero_grad();
    grads.accumulate_into(&mut model.store);
    if let Some(c) = cfg.clip_norm {
        let norm = model.store.clip_grad_norm(c);
        if !norm.is_finite() {
            return Err(Error::Tensor(TensorError::NonFinite { op: "gradient", node: l.index() }));
        }
    }
    opt.step(&mut model.store);
    Ok(value)
}
