//! Experiment matrices, run caching, CSV/SVG reports and the `CRNL` dataset format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glyphs::Image;
use crate::models::{EncoderMode, HeadKind, ModelConfig, SimilarityMode};
use crate::tasks::{Episode, Generator, Meta, Phase, TaskConfig, TaskKind, TestSet, Variant};
use crate::training::{train_run, OptimizerChoice, RunReport, RunStatus, TrainConfig};

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "CORELNET_OUT";

/// `$CORELNET_OUT`, or `runs/` under the working directory.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Full,
    /// 1500 iterations, 16px cognitive images, two conv layers.
    Fast,
}

impl Profile {
    pub const FAST_ITERATIONS: usize = 1500;
    pub const FAST_IMAGE: usize = 16;
    pub const FAST_SEEDS: u64 = 5;
}

const RUN_KEYS: &[&str] = &[
    "profile",
    "task",
    "variant",
    "spurious",
    "masked_slot",
    "m",
    "split_seed",
    "glyph_seed",
    "image_size",
    "model",
    "similarity",
    "encoder",
    "concat_sensory",
    "l1_lambda",
    "tcn_trainable",
    "conv_layers",
    "embed_dim",
    "seed",
    "iterations",
    "batch_size",
    "lr",
    "optimizer",
    "eval_every",
    "eval_episodes",
    "curve_episodes",
    "clip_norm",
    "test_sets",
];
const MATRIX_KEYS: &[&str] = &["seeds", "jobs"];
const SWEEP_PREFIX: &str = "sweep.";

/// Line-oriented `key = value` configuration.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
            s.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let known = RUN_KEYS.contains(&key)
            || MATRIX_KEYS.contains(&key)
            || key.strip_prefix(SWEEP_PREFIX).is_some_and(|k| RUN_KEYS.contains(&k) && k != "seed");
        if !known {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` command-line override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Result<Self> {
        self.set(key, &value.to_string())?;
        Ok(self)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))))
            .transpose()
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                _ => Err(Error::Config(format!("{key} = {v:?} is not a boolean"))),
            })
            .transpose()
    }

    pub fn profile(&self) -> Result<Profile> {
        match self.get("profile").unwrap_or("full") {
            "full" => Ok(Profile::Full),
            "fast" => Ok(Profile::Fast),
            p => Err(Error::Config(format!("unknown profile {p:?}"))),
        }
    }

    /// Builds one run from these settings. `seed` overrides the `seed` key.
    pub fn resolve(&self, seed: Option<u64>) -> Result<RunSpec> {
        let profile = self.profile()?;
        let fast = profile == Profile::Fast;
        let kind: TaskKind = self.parsed("task")?.unwrap_or(TaskKind::SameDiff);
        let mut task = TaskConfig::new(kind);
        if let Some(v) = self.parsed::<Variant>("variant")? {
            task.variant = v;
        }
        if let Some(b) = self.flag("spurious")? {
            task.spurious = b;
        }
        if let Some(b) = self.flag("masked_slot")? {
            task.masked_slot = b;
        }
        task.m = self.parsed("m")?.unwrap_or(0);
        task.split_seed = self.parsed("split_seed")?.unwrap_or(0);
        task.glyph_seed = self.parsed("glyph_seed")?.unwrap_or(0);
        task.image_size = self.parsed("image_size")?.unwrap_or(if fast { Profile::FAST_IMAGE } else { 32 });
        task.validate()?;

        let head: HeadKind = self.parsed("model")?.unwrap_or(HeadKind::Corelnet);
        let mut model = ModelConfig::new(head, task.seq_len(), task.num_classes());
        model.image_size = task.cell_size();
        // 12px game cells halve cleanly only twice.
        model.conv_layers = self.parsed("conv_layers")?.unwrap_or(if fast || kind.is_game() { 2 } else { 3 });
        if let Some(d) = self.parsed("embed_dim")? {
            model.embed_dim = d;
        }
        if let Some(s) = self.parsed::<SimilarityMode>("similarity")? {
            model.similarity = s;
        }
        if let Some(e) = self.parsed::<EncoderMode>("encoder")? {
            model.encoder_mode = e;
        }
        model.concat_sensory = self.flag("concat_sensory")?.unwrap_or(false);
        model.tcn_trainable = self.flag("tcn_trainable")?.unwrap_or(true);
        let l1: f64 = self.parsed("l1_lambda")?.unwrap_or(0.0);
        model.l1_layer = l1 > 0.0;
        model.validate()?;

        let seed = match seed {
            Some(s) => s,
            None => self.parsed("seed")?.unwrap_or(0),
        };
        let mut train = if kind.is_game() { TrainConfig::games(seed) } else { TrainConfig::cognitive(seed) };
        if fast {
            train.iterations = Profile::FAST_ITERATIONS;
        }
        train.l1_lambda = l1;
        if let Some(v) = self.parsed("iterations")? {
            train.iterations = v;
        }
        if let Some(v) = self.parsed("batch_size")? {
            train.batch_size = v;
        }
        if let Some(v) = self.parsed("lr")? {
            train.lr = v;
        }
        if let Some(v) = self.get("optimizer") {
            train.optimizer = match v {
                "adam" => OptimizerChoice::Adam,
                "sgd" => OptimizerChoice::Sgd,
                _ => return Err(Error::Config(format!("optimizer = {v:?}: expected adam or sgd"))),
            };
        }
        if let Some(v) = self.parsed("eval_every")? {
            train.eval_every = v;
        }
        if let Some(v) = self.parsed("eval_episodes")? {
            train.eval_episodes = v;
        }
        if let Some(v) = self.parsed("curve_episodes")? {
            train.curve_episodes = v;
        }
        if let Some(v) = self.get("clip_norm") {
            train.clip_norm = match v {
                "off" | "none" => None,
                _ => Some(v.parse().map_err(|e| Error::Config(format!("clip_norm = {v:?}: {e}")))?),
            };
        }
        if let Some(v) = self.get("test_sets") {
            train.test_sets = list(v).iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        train.validate()?;
        Ok(RunSpec { task, model, train })
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

/// Parses `0..10` or `0, 3, 7`.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let bad = |e: &dyn std::fmt::Display| Error::Config(format!("seeds = {v:?}: {e}"));
    if let Some((a, b)) = v.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| bad(&e))?;
        let b: u64 = b.trim().parse().map_err(|e| bad(&e))?;
        if a >= b {
            return Err(bad(&"empty range"));
        }
        return Ok((a..b).collect());
    }
    let seeds: Vec<u64> = list(v).iter().map(|s| s.parse().map_err(|e| bad(&e))).collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(bad(&"no seeds"));
    }
    Ok(seeds)
}

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunSpec {
    /// File-name-safe identifier, unique per (config, seed).
    pub fn key(&self) -> String {
        let json = serde_json::to_string(self).expect("run spec serializes");
        format!(
            "{}-{}-{}-m{}-s{}-{:016x}",
            self.task.kind,
            self.task.variant.name(),
            self.model.head.name(),
            self.task.m,
            self.train.seed,
            fnv1a(json.as_bytes())
        )
    }

    pub fn run(&self) -> Result<RunReport> {
        train_run(&self.model, &self.task, &self.train)
    }

    fn matches(&self, r: &RunReport) -> bool {
        r.task == self.task && r.model == self.model && r.train == self.train
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Cartesian product of sweep axes over a base configuration, times seeds.
#[derive(Clone, Debug)]
pub struct ExperimentMatrix {
    pub base: Settings,
    pub axes: Vec<(String, Vec<String>)>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub out_dir: PathBuf,
}

impl ExperimentMatrix {
    /// Reads `sweep.<key> = a, b, ...`, `seeds` and `jobs` out of `settings`.
    pub fn from_settings(settings: &Settings, out_dir: PathBuf) -> Result<Self> {
        let mut base = Settings::new();
        let mut axes = Vec::new();
        for (k, v) in &settings.values {
            if let Some(key) = k.strip_prefix(SWEEP_PREFIX) {
                let values = list(v);
                if values.is_empty() {
                    return Err(Error::Config(format!("{k} has no values")));
                }
                axes.push((key.to_string(), values));
            } else if !MATRIX_KEYS.contains(&k.as_str()) {
                base.set(k, v)?;
            }
        }
        let seeds = match settings.get("seeds") {
            Some(v) => parse_seeds(v)?,
            None => {
                let n = if settings.profile()? == Profile::Fast { Profile::FAST_SEEDS } else { 10 };
                (0..n).collect()
            }
        };
        let jobs = settings.parsed("jobs")?.unwrap_or(1usize).max(1);
        Ok(Self { base, axes, seeds, jobs, out_dir })
    }

    /// Every cell of the matrix, seeds innermost.
    pub fn cells(&self) -> Result<Vec<RunSpec>> {
        let mut combos: Vec<Settings> = vec![self.base.clone()];
        for (key, values) in &self.axes {
            let mut next = Vec::with_capacity(combos.len() * values.len());
            for c in &combos {
                for v in values {
                    next.push(c.clone().with(key, v)?);
                }
            }
            combos = next;
        }
        let mut cells = Vec::with_capacity(combos.len() * self.seeds.len());
        let mut keys = BTreeSet::new();
        for c in &combos {
            for &s in &self.seeds {
                let spec = c.resolve(Some(s))?;
                if !keys.insert(spec.key()) {
                    return Err(Error::Config(format!("duplicate matrix cell {}", spec.key())));
                }
                cells.push(spec);
            }
        }
        Ok(cells)
    }
}

#[derive(Debug)]
pub struct MatrixOutcome {
    /// One report per cell, in cell order.
    pub reports: Vec<RunReport>,
    pub trained: usize,
    pub reused: usize,
    pub dir: PathBuf,
}

pub fn run_matrix(matrix: &ExperimentMatrix, progress: impl Fn(&str) + Sync) -> Result<MatrixOutcome> {
    run_cells(&matrix.cells()?, &matrix.out_dir, matrix.jobs, progress)
}

/// Runs (or reloads) each cell under `dir/runs/<key>.json`, then writes
/// `runs.csv`, `runs.jsonl` and `aggregate.csv` once every cell is done.
pub fn run_cells(cells: &[RunSpec], dir: &Path, jobs: usize, progress: impl Fn(&str) + Sync) -> Result<MatrixOutcome> {
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let slots: Vec<Mutex<Option<Result<(RunReport, bool)>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(spec) = cells.get(i) else { break };
                let res = run_cell(spec, &runs_dir, &progress);
                *slots[i].lock().unwrap() = Some(res);
            });
        }
    });
    let mut reports = Vec::with_capacity(cells.len());
    let (mut trained, mut reused) = (0, 0);
    for slot in slots {
        let (r, fresh) = slot.into_inner().unwrap().expect("every cell visited")?;
        if fresh {
            trained += 1;
        } else {
            reused += 1;
        }
        reports.push(r);
    }
    write_run_tables(&reports, dir)?;
    Ok(MatrixOutcome { reports, trained, reused, dir: dir.to_path_buf() })
}

fn run_cell(spec: &RunSpec, runs_dir: &Path, progress: &(impl Fn(&str) + Sync)) -> Result<(RunReport, bool)> {
    let key = spec.key();
    let path = runs_dir.join(format!("{key}.json"));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(r) = serde_json::from_str::<RunReport>(&text) {
            if spec.matches(&r) {
                progress(&format!("cached  {key}"));
                return Ok((r, false));
            }
        }
    }
    progress(&format!("start   {key}"));
    let r = spec.run()?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(&r)?)?;
    fs::rename(&tmp, &path)?;
    progress(&format!("done    {key}  test {:.3}  {:.0}s", r.test_accuracy(), r.wall_seconds));
    Ok((r, true))
}

/// One CSV row per (run, test set).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub task: String,
    pub model: String,
    pub variant: String,
    pub similarity_mode: String,
    pub encoder_mode: String,
    pub concat_sensory: bool,
    pub l1_lambda: f64,
    pub m: usize,
    pub test_set: String,
    pub seed: u64,
    pub iterations: usize,
    pub final_test_accuracy: f64,
    pub final_train_accuracy: f64,
    pub wall_seconds: f64,
    pub status: String,
}

/// Variant column: the task variant plus any input modifiers.
pub fn variant_label(task: &TaskConfig) -> String {
    let mut s = task.variant.name().to_string();
    if task.spurious && task.kind != TaskKind::SeparatedInputs {
        s.push_str("+colour");
    }
    if task.masked_slot && task.kind.has_masked_slot() {
        s.push_str("+mask");
    }
    s
}

pub fn run_rows(r: &RunReport) -> Vec<RunRow> {
    let status = match &r.status {
        RunStatus::Ok => "ok".to_string(),
        RunStatus::Failed(msg) => format!("failed: {msg}"),
    };
    r.final_test_accuracy
        .iter()
        .map(|(set, &acc)| RunRow {
            task: r.task.kind.to_string(),
            model: r.model.head.name().to_string(),
            variant: variant_label(&r.task),
            similarity_mode: r.model.similarity.name().to_string(),
            encoder_mode: r.model.encoder_mode.name().to_string(),
            concat_sensory: r.model.concat_sensory,
            l1_lambda: r.train.l1_lambda,
            m: r.task.m,
            test_set: set.clone(),
            seed: r.seed,
            iterations: r.train.iterations,
            final_test_accuracy: acc,
            final_train_accuracy: r.final_train_accuracy,
            wall_seconds: r.wall_seconds,
            status: status.clone(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub task: String,
    pub model: String,
    pub variant: String,
    pub similarity_mode: String,
    pub encoder_mode: String,
    pub concat_sensory: bool,
    pub l1_lambda: f64,
    pub m: usize,
    pub test_set: String,
    pub iterations: usize,
    pub runs: usize,
    /// Runs whose status is not `ok`; they still count towards the mean.
    pub failed: usize,
    pub mean_test_accuracy: f64,
    pub std_test_accuracy: f64,
    pub mean_train_accuracy: f64,
    pub std_train_accuracy: f64,
}

impl AggregateRow {
    /// Model name plus any non-default ablation flags.
    pub fn arm(&self) -> String {
        arm_label(&self.model, &self.similarity_mode, &self.encoder_mode, self.concat_sensory, self.l1_lambda)
    }
}

fn arm_label(model: &str, similarity: &str, encoder: &str, concat: bool, l1: f64) -> String {
    let mut s = model.to_string();
    let default_sim = if model == HeadKind::Transformer.name() { "asymmetric" } else { "symmetric" };
    let relational = model == HeadKind::Corelnet.name() || model == HeadKind::CorelnetT.name() || model == HeadKind::Transformer.name();
    if relational && similarity != default_sim {
        let _ = write!(s, " {similarity}");
    }
    if encoder != "learned" {
        let _ = write!(s, " {encoder}-encoder");
    }
    if concat {
        s.push_str(" +sensory");
    }
    if l1 > 0.0 {
        let _ = write!(s, " l1={l1}");
    }
    s
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups rows by everything except seed, timing and outcome.
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    type Key = (String, String, String, String, String, bool, String, usize, String, usize);
    let mut groups: BTreeMap<Key, Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        let key = (
            r.task.clone(),
            r.model.clone(),
            r.variant.clone(),
            r.similarity_mode.clone(),
            r.encoder_mode.clone(),
            r.concat_sensory,
            r.l1_lambda.to_string(),
            r.m,
            r.test_set.clone(),
            r.iterations,
        );
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let mut g = g;
            g.sort_by_key(|r| r.seed);
            let test: Vec<f64> = g.iter().map(|r| r.final_test_accuracy).collect();
            let train: Vec<f64> = g.iter().map(|r| r.final_train_accuracy).collect();
            let (mt, st) = mean_std(&test);
            let (mr, sr) = mean_std(&train);
            let f = g[0];
            AggregateRow {
                task: f.task.clone(),
                model: f.model.clone(),
                variant: f.variant.clone(),
                similarity_mode: f.similarity_mode.clone(),
                encoder_mode: f.encoder_mode.clone(),
                concat_sensory: f.concat_sensory,
                l1_lambda: f.l1_lambda,
                m: f.m,
                test_set: f.test_set.clone(),
                iterations: f.iterations,
                runs: g.len(),
                failed: g.iter().filter(|r| r.status != "ok").count(),
                mean_test_accuracy: mt,
                std_test_accuracy: st,
                mean_train_accuracy: mr,
                std_train_accuracy: sr,
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_run_rows(path: &Path) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

/// Writes `runs.csv`, `runs.jsonl` and `aggregate.csv`; returns their paths.
pub fn write_run_tables(reports: &[RunReport], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let rows: Vec<RunRow> = reports.iter().flat_map(run_rows).collect();
    let runs = dir.join("runs.csv");
    write_csv(&runs, &rows)?;
    let agg = dir.join("aggregate.csv");
    write_csv(&agg, &aggregate(&rows))?;
    let jsonl = dir.join("runs.jsonl");
    let mut f = std::io::BufWriter::new(fs::File::create(&jsonl)?);
    for r in reports {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(vec![runs, jsonl, agg])
}

/// Loads every cached report under `dir/runs/`, sorted by file name.
pub fn load_reports(dir: &Path) -> Result<Vec<RunReport>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.join("runs"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Ok(serde_json::from_str(&fs::read_to_string(p)?)?)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CitedResult {
    pub task: String,
    pub test_set: String,
    pub model: String,
    pub mean: f64,
    pub std: f64,
}

const CITED_CSV: &str = include_str!("../data/cited_baselines.csv");

/// Published accuracies (percent) of baselines this crate does not implement.
pub fn cited_baselines() -> Vec<CitedResult> {
    csv::Reader::from_reader(CITED_CSV.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .expect("bundled baseline table parses")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    Table,
    SweepPlot,
}

/// Writes `table.csv` or one `sweep_*.svg` per (task, variant, test set, iterations).
pub fn emit_report(reports: &[RunReport], kind: ReportKind, dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to summarize".into()));
    }
    fs::create_dir_all(dir)?;
    let agg = aggregate(&reports.iter().flat_map(run_rows).collect::<Vec<_>>());
    match kind {
        ReportKind::Table => {
            let path = dir.join("table.csv");
            write_table(&agg, &path)?;
            Ok(vec![path])
        }
        ReportKind::SweepPlot => {
            let mut out = Vec::new();
            for plot in sweep_plots(&agg) {
                let path = dir.join(format!("sweep_{}.svg", plot.slug));
                fs::write(&path, plot.render_svg())?;
                out.push(path);
            }
            Ok(out)
        }
    }
}

fn pct(mean: f64, std: f64) -> String {
    format!("{:.1} ± {:.1}", 100.0 * mean, 100.0 * std)
}

/// Pivot: one row per (task, variant, m, test set, iterations), one column per arm,
/// then the cited baselines.
pub fn write_table(agg: &[AggregateRow], path: &Path) -> Result<()> {
    let arms: BTreeSet<String> = agg.iter().map(AggregateRow::arm).collect();
    let mut rows: BTreeMap<(String, String, usize, String, usize), BTreeMap<String, String>> = BTreeMap::new();
    for a in agg {
        let mut cell = pct(a.mean_test_accuracy, a.std_test_accuracy);
        if a.failed > 0 {
            let _ = write!(cell, " ({} failed)", a.failed);
        }
        rows.entry((a.task.clone(), a.variant.clone(), a.m, a.test_set.clone(), a.iterations))
            .or_default()
            .insert(a.arm(), cell);
    }
    let cited = cited_baselines();
    let cited_models: BTreeSet<String> = cited.iter().map(|c| c.model.clone()).collect();
    let games = rows.keys().any(|k| k.0.starts_with("rg_"));
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["task".to_string(), "variant".into(), "m".into(), "test_set".into(), "iterations".into()];
    header.extend(arms.iter().cloned());
    if games {
        header.extend(cited_models.iter().map(|m| format!("{m} (cited, not reproduced)")));
    }
    w.write_record(&header)?;
    for ((task, variant, m, set, it), cells) in &rows {
        let mut rec = vec![task.clone(), variant.clone(), m.to_string(), set.clone(), it.to_string()];
        rec.extend(arms.iter().map(|a| cells.get(a).cloned().unwrap_or_default()));
        if games {
            for cm in &cited_models {
                let hit = cited.iter().find(|c| &c.task == task && &c.test_set == set && &c.model == cm);
                rec.push(hit.map(|c| format!("{:.1} ± {:.1}", c.mean, c.std)).unwrap_or_default());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(m, mean, std)`, sorted by `m`.
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPlot {
    pub slug: String,
    pub title: String,
    pub chance: f64,
    pub series: Vec<Series>,
}

/// Accuracy-vs-m plots, one per (task, variant, test set, iterations).
pub fn sweep_plots(agg: &[AggregateRow]) -> Vec<SweepPlot> {
    let mut groups: BTreeMap<(String, String, String, usize), BTreeMap<String, Vec<(f64, f64, f64)>>> = BTreeMap::new();
    for a in agg {
        groups
            .entry((a.task.clone(), a.variant.clone(), a.test_set.clone(), a.iterations))
            .or_default()
            .entry(a.arm())
            .or_default()
            .push((a.m as f64, a.mean_test_accuracy, a.std_test_accuracy));
    }
    groups
        .into_iter()
        .map(|((task, variant, set, it), series)| {
            let chance = task.parse::<TaskKind>().map(|k| 1.0 / k.num_classes() as f64).unwrap_or(f64::NAN);
            SweepPlot {
                slug: format!("{task}_{variant}_{set}_it{it}").replace('+', "-"),
                title: format!("{task} ({variant}), {set} test set, {it} iterations"),
                chance,
                series: series
                    .into_iter()
                    .map(|(label, mut points)| {
                        points.sort_by(|a, b| a.0.total_cmp(&b.0));
                        Series { label, points }
                    })
                    .collect(),
            }
        })
        .collect()
}

const SERIES_COLOURS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

impl SweepPlot {
    pub fn render_svg(&self) -> String {
        let (w, h) = (720.0, 440.0);
        let (left, right, top, bottom) = (60.0, 200.0, 40.0, 50.0);
        let ms: BTreeSet<u64> = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0 as u64)).collect();
        let (lo, hi) = match (ms.first(), ms.last()) {
            (Some(&a), Some(&b)) if a < b => (a as f64, b as f64),
            (Some(&a), _) => (a as f64 - 1.0, a as f64 + 1.0),
            _ => (0.0, 1.0),
        };
        let x = |m: f64| left + (m - lo) / (hi - lo) * (w - left - right);
        let y = |acc: f64| top + (1.0 - acc) * (h - top - bottom);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (left + w - right) / 2.0, xml_escape(&self.title));
        for i in 0..=5 {
            let acc = i as f64 / 5.0;
            let _ = writeln!(s, r##"<line x1="{left}" x2="{}" y1="{1:.1}" y2="{1:.1}" stroke="#ddd"/>"##, w - right, y(acc));
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{acc:.1}</text>"#, left - 6.0, y(acc) + 4.0);
        }
        for &m in &ms {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{m}</text>"#, x(m as f64), h - bottom + 18.0);
        }
        let _ = writeln!(s, r##"<line x1="{left}" x2="{left}" y1="{top}" y2="{}" stroke="#000"/>"##, h - bottom);
        let _ = writeln!(s, r##"<line x1="{left}" x2="{}" y1="{1}" y2="{1}" stroke="#000"/>"##, w - right, h - bottom);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">held-out shapes m</text>"#, (left + w - right) / 2.0, h - 12.0);
        let _ = writeln!(s, r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">test accuracy</text>"#, (top + h - bottom) / 2.0);
        if self.chance.is_finite() {
            let _ = writeln!(s, r##"<line class="chance" x1="{left}" x2="{}" y1="{1:.1}" y2="{1:.1}" stroke="#888" stroke-dasharray="4 4"/>"##, w - right, y(self.chance));
        }
        for (i, ser) in self.series.iter().enumerate() {
            let c = SERIES_COLOURS[i % SERIES_COLOURS.len()];
            let pts: Vec<String> = ser.points.iter().map(|p| format!("{:.1},{:.1}", x(p.0), y(p.1))).collect();
            let _ = writeln!(s, r#"<g class="series" data-label="{}">"#, xml_escape(&ser.label));
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, pts.join(" "));
            for &(m, mean, sd) in &ser.points {
                let (px, y0, y1) = (x(m), y((mean - sd).max(0.0)), y((mean + sd).min(1.0)));
                let _ = writeln!(s, r#"<line x1="{px:.1}" x2="{px:.1}" y1="{y0:.1}" y2="{y1:.1}" stroke="{c}"/>"#);
                let _ = writeln!(s, r#"<line x1="{:.1}" x2="{:.1}" y1="{y0:.1}" y2="{y0:.1}" stroke="{c}"/>"#, px - 4.0, px + 4.0);
                let _ = writeln!(s, r#"<line x1="{:.1}" x2="{:.1}" y1="{y1:.1}" y2="{y1:.1}" stroke="{c}"/>"#, px - 4.0, px + 4.0);
                let _ = writeln!(s, r#"<circle cx="{px:.1}" cy="{:.1}" r="3" fill="{c}"/>"#, y(mean));
            }
            let _ = writeln!(s, "</g>");
            let ly = top + 10.0 + 20.0 * i as f64;
            let _ = writeln!(s, r#"<line x1="{0}" x2="{1}" y1="{ly}" y2="{ly}" stroke="{c}" stroke-width="2"/><text x="{2}" y="{3}">{4}</text>"#, w - right + 15.0, w - right + 35.0, w - right + 40.0, ly + 4.0, xml_escape(&ser.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub const DATASET_MAGIC: [u8; 4] = *b"CRNL";
pub const DATASET_VERSION: u16 = 1;

/// A frozen episode set in the `CRNL` binary layout (little-endian):
///
/// ```text
/// "CRNL" | u16 version | u16 len + task id | u16 height | u16 width | u8 channels (3) | u32 count
/// per episode: u16 T | u16 num_classes | u16 label | T*H*W*3 image bytes (HWC) | u32 len + metadata JSON
/// ```
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetFile {
    pub version: u16,
    pub task: TaskKind,
    pub height: usize,
    pub width: usize,
    pub episodes: Vec<Episode>,
}

impl DatasetFile {
    pub fn new(task: TaskKind, episodes: Vec<Episode>) -> Result<Self> {
        let (height, width) = episodes
            .first()
            .and_then(|e| e.images.first())
            .map(|i| (i.height, i.width))
            .ok_or_else(|| Error::Format("cannot infer image size from an empty dataset".into()))?;
        Ok(Self { version: DATASET_VERSION, task, height, width, episodes })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let u16_of = |v: usize, what: &str| {
            u16::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in 16 bits")))
        };
        let mut out = Vec::new();
        out.extend_from_slice(&DATASET_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let id = self.task.to_string();
        out.extend_from_slice(&u16_of(id.len(), "task id length")?.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&u16_of(self.height, "height")?.to_le_bytes());
        out.extend_from_slice(&u16_of(self.width, "width")?.to_le_bytes());
        out.push(3);
        let count = u32::try_from(self.episodes.len()).map_err(|_| Error::Format("too many episodes".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (i, e) in self.episodes.iter().enumerate() {
            if e.task != self.task {
                return Err(Error::Format(format!("episode {i} is {}, file holds {}", e.task, self.task)));
            }
            out.extend_from_slice(&u16_of(e.images.len(), "sequence length")?.to_le_bytes());
            out.extend_from_slice(&u16_of(e.num_classes, "class count")?.to_le_bytes());
            out.extend_from_slice(&u16_of(e.label, "label")?.to_le_bytes());
            for img in &e.images {
                if img.height != self.height || img.width != self.width || img.data.len() != self.height * self.width * 3 {
                    return Err(Error::Format(format!("episode {i} has a {}x{} image", img.height, img.width)));
                }
                out.extend_from_slice(&img.data);
            }
            let meta = serde_json::to_vec(&e.meta)?;
            out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
            out.extend_from_slice(&meta);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf: bytes, pos: 0 };
        let magic = c.take(4, "magic")?;
        if magic != DATASET_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected {:?}", DATASET_MAGIC)));
        }
        let version = c.u16("version")?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported version {version}, expected {DATASET_VERSION}")));
        }
        let n = c.u16("task id length")? as usize;
        let id = std::str::from_utf8(c.take(n, "task id")?).map_err(|e| Error::Format(format!("task id: {e}")))?;
        let task: TaskKind = id.parse()?;
        let height = c.u16("height")? as usize;
        let width = c.u16("width")? as usize;
        let channels = c.take(1, "channels")?[0];
        if channels != 3 {
            return Err(Error::Format(format!("found {channels} channels, expected 3")));
        }
        let count = c.u32("episode count")? as usize;
        let mut episodes = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let t = c.u16("sequence length")? as usize;
            let num_classes = c.u16("class count")? as usize;
            let label = c.u16("label")? as usize;
            let mut images = Vec::with_capacity(t);
            for _ in 0..t {
                images.push(Image { height, width, data: c.take(height * width * 3, "image bytes")?.to_vec() });
            }
            let len = c.u32("metadata length")? as usize;
            let at = c.pos;
            let meta: Meta = serde_json::from_slice(c.take(len, "metadata")?)
                .map_err(|e| Error::Format(format!("metadata at offset {at}: {e}")))?;
            episodes.push(Episode { task, images, num_classes, label, meta });
        }
        if c.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes at offset {}", bytes.len() - c.pos, c.pos)));
        }
        Ok(Self { version, task, height, width, episodes })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(Error::Format(format!("truncated at offset {}: {what} needs {n} bytes, {left} left", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Generates `count` episodes and writes them to `path`.
pub fn export_dataset(cfg: &TaskConfig, phase: Phase, count: usize, seed: u64, path: &Path) -> Result<DatasetFile> {
    let episodes = Generator::new(cfg.clone())?.batch(phase, seed, 0, count)?;
    let d = DatasetFile::new(cfg.kind, episodes)?;
    fs::write(path, d.encode()?)?;
    Ok(d)
}

pub fn import_dataset(path: &Path) -> Result<DatasetFile> {
    DatasetFile::decode(&fs::read(path)?)
}

/// Parses `train`, `heldout`, `hexomino` or `stripe`.
pub fn parse_phase(s: &str) -> Result<Phase> {
    if s == "train" {
        Ok(Phase::Train)
    } else {
        Ok(Phase::Test(s.parse::<TestSet>()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn report(seed: u64, acc: f64) -> RunReport {
        let task = TaskConfig::new(TaskKind::SameDiff);
        RunReport {
            model: ModelConfig::new(HeadKind::Corelnet, task.seq_len(), task.num_classes()),
            task,
            train: TrainConfig::cognitive(seed),
            seed,
            curve: vec![],
            losses: vec![],
            final_train_accuracy: acc,
            final_test_accuracy: BTreeMap::from([("heldout".to_string(), acc)]),
            wall_seconds: 1.0,
            param_count: 0,
            trainable_params: 0,
            encoder_checksum_start: 0,
            encoder_checksum_end: 0,
            status: RunStatus::Ok,
        }
    }

    #[test]
    fn settings_parse_and_reject() {
        let s = Settings::parse("# c\ntask = rmts\n m = 95 # trailing\n\nmodel=corelnet_t\n").unwrap();
        assert_eq!(s.get("m"), Some("95"));
        let spec = s.resolve(Some(3)).unwrap();
        assert_eq!(spec.task.kind, TaskKind::Rmts);
        assert_eq!(spec.model.head, HeadKind::CorelnetT);
        assert_eq!(spec.train.seed, 3);
        assert!(Settings::parse("bogus = 1").is_err());
        assert!(Settings::parse("task rmts").is_err());
        assert!(Settings::parse("concat_sensory = maybe").unwrap().resolve(None).is_err());
    }

    #[test]
    fn table3_defaults() {
        let spec = Settings::new().resolve(None).unwrap();
        assert_eq!(spec.train.iterations, 5000);
        assert_eq!(spec.train.lr, 5e-4);
        assert_eq!((spec.model.image_size, spec.model.conv_layers, spec.model.embed_dim), (32, 3, 128));
        let game = Settings::new().with("task", "rg_same").unwrap().resolve(None).unwrap();
        assert_eq!(game.train.iterations, 2500);
        let fast = Settings::new().with("profile", "fast").unwrap().resolve(None).unwrap();
        assert_eq!((fast.train.iterations, fast.model.image_size, fast.model.conv_layers), (1500, 16, 2));
    }

    #[test]
    fn l1_and_clip_flags() {
        let s = Settings::new().with("l1_lambda", 5).unwrap().with("clip_norm", "off").unwrap();
        let spec = s.resolve(None).unwrap();
        assert!(spec.model.l1_layer);
        assert_eq!(spec.train.l1_lambda, 5.0);
        assert_eq!(spec.train.clip_norm, None);
    }

    #[test]
    fn matrix_cells_count_and_unique() {
        let s = Settings::parse(
            "sweep.task = same_diff, rmts, dist3, identity_rules\nsweep.model = corelnet, corelnet_t, esbn\nseeds = 0..10\n",
        )
        .unwrap();
        let m = ExperimentMatrix::from_settings(&s, PathBuf::from("x")).unwrap();
        let cells = m.cells().unwrap();
        assert_eq!(cells.len(), 120);
        let keys: BTreeSet<String> = cells.iter().map(RunSpec::key).collect();
        assert_eq!(keys.len(), 120);
        assert_eq!(cells[0].key(), m.cells().unwrap()[0].key());
    }

    #[test]
    fn seeds_syntax() {
        assert_eq!(parse_seeds("2..5").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("7, 1").unwrap(), vec![7, 1]);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn constant_accuracies_have_zero_std() {
        let rows: Vec<RunRow> = (0..4).flat_map(|s| run_rows(&report(s, 0.75))).collect();
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].runs, 4);
        assert_eq!(agg[0].mean_test_accuracy, 0.75);
        assert_eq!(agg[0].std_test_accuracy, 0.0);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn failed_runs_flagged() {
        let mut bad = report(1, 0.5);
        bad.status = RunStatus::Failed("nan".into());
        let rows: Vec<RunRow> = [report(0, 1.0), bad].iter().flat_map(run_rows).collect();
        assert!(rows[1].status.starts_with("failed"));
        let agg = aggregate(&rows);
        assert_eq!((agg[0].runs, agg[0].failed), (2, 1));
        assert_eq!(agg[0].mean_test_accuracy, 0.75);
    }

    #[test]
    fn single_run_table_has_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&[report(0, 0.9)], ReportKind::Table, dir.path()).unwrap();
        let mut r = csv::Reader::from_path(&files[0]).unwrap();
        let recs: Vec<_> = r.records().collect::<std::result::Result<_, _>>().unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(&recs[0][5], "90.0 ± 0.0");
    }

    #[test]
    fn chance_series_is_flat() {
        let mut reports = Vec::new();
        for m in [0, 50, 85, 95, 98] {
            for seed in 0..3 {
                let mut r = report(seed, 0.5);
                r.task.m = m;
                reports.push(r);
            }
        }
        let agg = aggregate(&reports.iter().flat_map(run_rows).collect::<Vec<_>>());
        let plots = sweep_plots(&agg);
        assert_eq!(plots.len(), 1);
        let p = &plots[0];
        assert_eq!(p.chance, 0.5);
        let xs: Vec<f64> = p.series[0].points.iter().map(|q| q.0).collect();
        assert_eq!(xs, vec![0.0, 50.0, 85.0, 95.0, 98.0]);
        assert!(p.series[0].points.iter().all(|q| q.1 == p.chance && q.2 == 0.0));
        let svg = p.render_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 5);
    }

    #[test]
    fn cited_table_parses() {
        let c = cited_baselines();
        assert_eq!(c.len(), 48);
        let pn = c.iter().find(|r| r.model == "predinet" && r.task == "rg_row_matching" && r.test_set == "hexomino").unwrap();
        assert_eq!((pn.mean, pn.std), (50.3, 0.5));
    }

    #[test]
    fn arm_labels() {
        assert_eq!(arm_label("corelnet", "symmetric", "learned", false, 0.0), "corelnet");
        assert_eq!(arm_label("corelnet", "asymmetric", "random", true, 1.0), "corelnet asymmetric random-encoder +sensory l1=1");
        assert_eq!(arm_label("transformer", "asymmetric", "learned", false, 0.0), "transformer");
        assert_eq!(arm_label("esbn", "asymmetric", "learned", false, 0.0), "esbn");
    }

    #[test]
    fn dataset_header_errors() {
        let cfg = TaskConfig { image_size: 16, ..TaskConfig::new(TaskKind::SameDiff) };
        let eps = Generator::new(cfg).unwrap().batch(Phase::Train, 1, 0, 3).unwrap();
        let bytes = DatasetFile::new(TaskKind::SameDiff, eps).unwrap().encode().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(DatasetFile::decode(&bad).unwrap_err().to_string().contains("bad magic"));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(DatasetFile::decode(&v2).unwrap_err().to_string().contains("unsupported version 2"));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(DatasetFile::decode(&extra).unwrap_err().to_string().contains("trailing"));
    }
}
