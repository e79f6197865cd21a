//! Self-checks run by the `check` subcommand: finite-difference gradients,
//! label oracles and structural invariants of the relational models.

use std::collections::BTreeMap;

use corelnet_autograd::gradcheck::{finite_difference_check, model_check, CheckReport};
use corelnet_autograd::{Graph, ParamStore, Primitive, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::glyphs::Family;
use crate::models::{EncoderMode, HeadKind, Model, ModelConfig, SimilarityMode};
use crate::tasks::{oracle_label, Generator, Item, Phase, Rule, TaskConfig, TaskKind, TestSet, Variant, N_SHAPES};
use crate::training::{train_run, TrainConfig};

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-5;
pub const GRAD_TRIALS: usize = 50;
/// Largest allowed deviation of a label frequency from `1/k`.
pub const BALANCE_TOL: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

impl From<&CheckReport> for Outcome {
    fn from(r: &CheckReport) -> Self {
        Outcome::new(
            format!("grad {}", r.name),
            r.passed,
            format!("{} coords, {} skipped at kinks, max rel err {:.2e}", r.checked, r.skipped, r.max_rel_error),
        )
    }
}

/// A model small enough for finite differences: 8px images, one conv layer.
pub fn tiny_config(head: HeadKind, seq_len: usize, num_classes: usize) -> ModelConfig {
    ModelConfig {
        image_size: 8,
        conv_layers: 1,
        conv_channels: 2,
        enc_hidden: 6,
        embed_dim: 4,
        decoder_hidden: 5,
        t_dim: 8,
        t_heads: 2,
        t_query: 2,
        t_pos: 2,
        t_ff: 6,
        tf_heads: 2,
        tf_ff: 6,
        lstm_hidden: 5,
        esbn_key: 3,
        ..ModelConfig::new(head, seq_len, num_classes)
    }
}

/// Every head plus the CoRelNet ablation switches, on T = 2.
pub fn gradient_arms() -> Vec<(String, ModelConfig, f64)> {
    let base = |h| tiny_config(h, 2, 2);
    vec![
        ("corelnet".into(), base(HeadKind::Corelnet), 0.0),
        ("corelnet asymmetric".into(), ModelConfig { similarity: SimilarityMode::Asymmetric, ..base(HeadKind::Corelnet) }, 0.0),
        ("corelnet +sensory".into(), ModelConfig { concat_sensory: true, ..base(HeadKind::Corelnet) }, 0.0),
        ("corelnet l1".into(), ModelConfig { l1_layer: true, ..base(HeadKind::Corelnet) }, 0.5),
        ("corelnet random-encoder".into(), ModelConfig { encoder_mode: EncoderMode::Random, ..base(HeadKind::Corelnet) }, 0.0),
        ("corelnet_t".into(), base(HeadKind::CorelnetT), 0.0),
        ("transformer".into(), base(HeadKind::Transformer), 0.0),
        ("transformer symmetric".into(), ModelConfig { similarity: SimilarityMode::Symmetric, ..base(HeadKind::Transformer) }, 0.0),
        ("lstm".into(), base(HeadKind::Lstm), 0.0),
        ("esbn".into(), base(HeadKind::Esbn), 0.0),
    ]
}

pub fn primitive_gradients(trials: usize, seed: u64) -> Vec<CheckReport> {
    Primitive::ALL.iter().map(|&p| finite_difference_check(p, trials, GRAD_EPS, GRAD_TOL, seed)).collect()
}

/// Loss gradient w.r.t. every trainable parameter for a batch of two random episodes.
pub fn head_gradient(name: &str, cfg: &ModelConfig, l1_lambda: f64, trials: usize, eps: f64, seed: u64) -> CheckReport {
    let cfg = cfg.clone();
    model_check(name, trials, eps, GRAD_TOL, seed, 3, |rng| {
        let skeleton = Model::<f64>::new(cfg.clone(), rng.gen()).expect("tiny config is valid");
        let batch = 2;
        let n = batch * cfg.seq_len * 3 * cfg.image_size * cfg.image_size;
        let images = Tensor::new(
            vec![batch * cfg.seq_len, 3, cfg.image_size, cfg.image_size],
            (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..cfg.num_classes)).collect();
        let store = skeleton.store.clone();
        let f = move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let mut m = skeleton.clone();
            m.store = s.clone();
            let x = g.input(images.clone());
            let fw = m.forward(g, x, batch).map_err(|e| match e {
                crate::Error::Tensor(t) => t,
                other => TensorError::InvalidArgument { op: "model", msg: other.to_string() },
            })?;
            let ce = g.cross_entropy(fw.logits, &labels)?;
            match fw.l1 {
                Some(p) if l1_lambda > 0.0 => {
                    let p = g.scale(p, l1_lambda)?;
                    g.add(ce, p)
                }
                _ => Ok(ce),
            }
        };
        (store, f)
    })
}

/// Every task family and variant, each at its largest admissible holdout.
pub fn task_families() -> Vec<TaskConfig> {
    let at_max = |kind: TaskKind| TaskConfig { m: N_SHAPES - kind.k_min(), ..TaskConfig::new(kind) };
    let mut out: Vec<TaskConfig> = [
        TaskKind::SameDiff,
        TaskKind::Rmts,
        TaskKind::Dist(3),
        TaskKind::IdentityRules,
        TaskKind::Rmts3,
        TaskKind::SameDiff6,
        TaskKind::IdentityRules4,
        TaskKind::SeparatedInputs,
    ]
    .into_iter()
    .map(at_max)
    .collect();
    out.push(TaskConfig { spurious: true, ..at_max(TaskKind::SameDiff) });
    out.push(TaskConfig { spurious: true, ..at_max(TaskKind::Rmts) });
    out.push(TaskConfig { spurious: true, ..at_max(TaskKind::Dist(3)) });
    out.push(TaskConfig { spurious: true, ..at_max(TaskKind::IdentityRules) });
    out.push(TaskConfig { masked_slot: true, ..at_max(TaskKind::IdentityRules) });
    for v in [Variant::Missing, Variant::Flipped, Variant::FlippedMissing] {
        out.push(TaskConfig { variant: v, ..at_max(TaskKind::IdentityRules4) });
    }
    out.push(at_max(TaskKind::Dist(10)));
    out.push(TaskConfig { variant: Variant::RestrictedPerms, ..at_max(TaskKind::Dist(10)) });
    out.extend(Rule::ALL.iter().map(|&r| TaskConfig::new(TaskKind::Game(r))));
    out
}

pub fn test_sets_of(kind: TaskKind) -> Vec<TestSet> {
    if kind.is_game() {
        vec![TestSet::Hexomino, TestSet::Stripe]
    } else {
        vec![TestSet::Heldout]
    }
}

#[derive(Clone, Debug)]
pub struct OracleSummary {
    pub task: String,
    pub episodes: usize,
    pub agree: usize,
    pub errors: Vec<String>,
    /// Largest `|freq(label) - 1/k|` over phases and labels.
    pub balance_dev: f64,
    pub hygiene_violations: usize,
    pub image_mismatches: usize,
}

impl OracleSummary {
    pub fn passed(&self) -> bool {
        self.agree == self.episodes
            && self.errors.is_empty()
            && self.balance_dev <= BALANCE_TOL
            && self.hygiene_violations == 0
            && self.image_mismatches == 0
    }
}

/// Draws `episodes` episodes (half training, half split over the test sets) and
/// checks labels against the brute-force oracle, label balance, split hygiene and
/// image/metadata consistency.
pub fn oracle_suite(cfg: &TaskConfig, episodes: usize, seed: u64) -> Result<OracleSummary> {
    let gen = Generator::new(cfg.clone())?;
    let sets = test_sets_of(cfg.kind);
    let mut phases = vec![(Phase::Train, episodes / 2)];
    let per_test = (episodes - episodes / 2) / sets.len();
    phases.extend(sets.iter().map(|&s| (Phase::Test(s), per_test)));
    let mut s = OracleSummary {
        task: format!("{} ({})", cfg.kind, crate::harness::variant_label(cfg)),
        episodes: 0,
        agree: 0,
        errors: Vec::new(),
        balance_dev: 0.0,
        hygiene_violations: 0,
        image_mismatches: 0,
    };
    let k = cfg.num_classes();
    for (phase, n) in phases {
        let mut counts = vec![0usize; k];
        for (i, ep) in gen.batch(phase, seed, 0, n)?.iter().enumerate() {
            s.episodes += 1;
            counts[ep.label] += 1;
            match oracle_label(ep) {
                Ok(l) if l == ep.label => s.agree += 1,
                Ok(l) => s.errors.push(format!("{phase:?} #{i}: label {} but oracle says {l}", ep.label)),
                Err(e) => s.errors.push(format!("{phase:?} #{i}: {e}")),
            }
            if gen.verify_images(ep).is_err() {
                s.image_mismatches += 1;
            }
            if !hygienic(&gen, cfg, phase, &ep.meta.items) {
                s.hygiene_violations += 1;
            }
        }
        for c in counts {
            s.balance_dev = s.balance_dev.max((c as f64 / n as f64 - 1.0 / k as f64).abs());
        }
    }
    s.errors.truncate(10);
    Ok(s)
}

fn hygienic(gen: &Generator, cfg: &TaskConfig, phase: Phase, items: &[Item]) -> bool {
    if cfg.kind.is_game() {
        let want = match phase {
            Phase::Train => Family::Pentomino,
            Phase::Test(TestSet::Stripe) => Family::Stripe,
            Phase::Test(_) => Family::Hexomino,
        };
        return items.iter().all(|it| match it {
            Item::Piece { family, .. } => *family == want,
            _ => true,
        });
    }
    let Some(split) = gen.split() else { return true };
    let pool = match phase {
        Phase::Train => &split.train[..],
        Phase::Test(_) => split.test_pool(),
    };
    items.iter().all(|it| match it {
        Item::Shape { glyph, .. } => pool.contains(glyph),
        _ => true,
    })
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

/// Random orthogonal `d x d` matrix by Gram-Schmidt.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Tensor<f64> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for u in &q {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    Tensor::new(vec![d, d], q.concat()).unwrap()
}

fn head_logits(model: &Model<f64>, z: &Tensor<f64>) -> Result<Tensor<f64>> {
    let mut g = Graph::inference();
    let zv = g.input(z.clone());
    let fw = model.head_forward(&mut g, zv)?;
    Ok(g.value(fw.logits).clone())
}

fn similarity(model: &Model<f64>, z: &Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let mut g = Graph::inference();
    let zv = g.input(z.clone());
    let (s, r) = model.similarity(&mut g, zv)?;
    Ok((g.value(s).clone(), g.value(r).clone()))
}

fn matmul(z: &Tensor<f64>, m: &Tensor<f64>) -> Result<Tensor<f64>> {
    let mut g = Graph::inference();
    let (a, b) = (g.input(z.clone()), g.input(m.clone()));
    let y = g.matmul(a, b)?;
    Ok(g.value(y).clone())
}

/// Structural invariants over `cases` random draws each.
pub fn invariant_suite(cases: usize, seed: u64) -> Result<Vec<Outcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, t, d) = (3usize, 5usize, 16usize);
    let cfg = |sim| ModelConfig { embed_dim: d, similarity: sim, ..ModelConfig::new(HeadKind::Corelnet, t, 4) };
    let sym = Model::<f64>::new(cfg(SimilarityMode::Symmetric), 1)?;
    let asym = Model::<f64>::new(cfg(SimilarityMode::Asymmetric), 1)?;
    let rt = Model::<f64>::new(ModelConfig { embed_dim: d, ..ModelConfig::new(HeadKind::CorelnetT, t, 4) }, 2)?;

    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut bump = |k: &'static str, v: f64| {
        let e = worst.entry(k).or_insert(0.0);
        *e = e.max(if v.is_nan() { f64::INFINITY } else { v });
    };
    let mut symmetric_exact = true;
    let mut asym_moved = f64::INFINITY;
    for _ in 0..cases {
        let z = random(&mut rng, &[b, t, d]);
        for (name, model) in [("rows sym", &sym), ("rows asym", &asym)] {
            let (_, r) = similarity(model, &z)?;
            for row in r.data().chunks(t) {
                bump(name, (row.iter().sum::<f64>() - 1.0).abs());
                if row.iter().any(|&p| p < 0.0) {
                    bump(name, f64::INFINITY);
                }
            }
        }
        let (s, r) = similarity(&sym, &z)?;
        for e in 0..b {
            let at = |i: usize, j: usize| s.data()[e * t * t + i * t + j];
            for i in 0..t {
                for j in 0..t {
                    symmetric_exact &= at(i, j) == at(j, i);
                    let bound = (at(i, i) * at(j, j)).sqrt();
                    bump("cauchy-schwarz", (at(i, j).abs() - bound).max(0.0) / bound.max(1e-300));
                }
            }
        }
        let mut perm: Vec<usize> = (0..t).collect();
        for i in (1..t).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut zp = z.clone();
        for e in 0..b {
            for (i, &p) in perm.iter().enumerate() {
                let (dst, src) = ((e * t + i) * d, (e * t + p) * d);
                zp.data_mut()[dst..dst + d].copy_from_slice(&z.data()[src..src + d]);
            }
        }
        let (_, rp) = similarity(&sym, &zp)?;
        for e in 0..b {
            for i in 0..t {
                for j in 0..t {
                    let want = r.data()[e * t * t + perm[i] * t + perm[j]];
                    bump("PRP^T", (rp.data()[e * t * t + i * t + j] - want).abs());
                }
            }
        }

        let a: f64 = rng.gen_range(0.25..4.0);
        let shift = random(&mut rng, &[1, 1, d]);
        let mut za = z.clone();
        for (i, v) in za.data_mut().iter_mut().enumerate() {
            *v = a * *v + shift.data()[i % d];
        }
        let tcn = |x: &Tensor<f64>| -> Result<Tensor<f64>> {
            let mut g = Graph::inference();
            let xv = g.input(x.clone());
            let y = sym.tcn(&mut g, xv)?;
            Ok(g.value(y).clone())
        };
        bump("tcn affine", tcn(&z)?.max_abs_diff(&tcn(&za)?));

        let m = random_orthogonal(&mut rng, d);
        let zm = matmul(&z, &m)?;
        bump("orthogonal corelnet", head_logits(&sym, &z)?.max_abs_diff(&head_logits(&sym, &zm)?));
        bump("orthogonal corelnet_t", head_logits(&rt, &z)?.max_abs_diff(&head_logits(&rt, &zm)?));
        let gap = head_logits(&asym, &z)?.max_abs_diff(&head_logits(&asym, &zm)?);
        asym_moved = asym_moved.min(gap);
    }

    let mut out = Vec::new();
    let tol = |name: &str, key: &str, tol: f64, worst: &BTreeMap<&str, f64>| {
        let v = worst[key];
        Outcome::new(name, v <= tol, format!("max deviation {v:.2e} (tolerance {tol:.0e})"))
    };
    out.push(tol("R row-stochastic (symmetric)", "rows sym", 1e-12, &worst));
    out.push(tol("R row-stochastic (asymmetric)", "rows asym", 1e-12, &worst));
    out.push(Outcome::new("S symmetric", symmetric_exact, "bitwise S_ij == S_ji"));
    out.push(tol("S Cauchy-Schwarz", "cauchy-schwarz", 1e-12, &worst));
    out.push(tol("P R P^T equivariance", "PRP^T", 1e-12, &worst));
    // exact only as the variance floor TCN_EPS goes to zero
    out.push(tol("TCN affine invariance", "tcn affine", 1e-5, &worst));
    out.push(tol("orthogonal invariance, CoRelNet logits", "orthogonal corelnet", 1e-9, &worst));
    out.push(tol("orthogonal invariance, CoRelNet-T logits", "orthogonal corelnet_t", 1e-9, &worst));
    out.push(Outcome::new(
        "asymmetric similarity is not orthogonally invariant",
        asym_moved > 1e-6,
        format!("smallest logit change {asym_moved:.2e}"),
    ));

    out.extend(training_invariants()?);
    Ok(out)
}

/// Frozen-encoder checksums and seed determinism on three short runs.
///
/// Uses RMTS: on same/different the saturated T = 2 similarity leaves the
/// encoder gradient exactly zero, so a learned encoder would not move either.
pub fn training_invariants() -> Result<Vec<Outcome>> {
    let task = TaskConfig { image_size: 16, m: 50, ..TaskConfig::new(TaskKind::Rmts) };
    let model = |mode| ModelConfig {
        image_size: 16,
        conv_layers: 2,
        encoder_mode: mode,
        ..ModelConfig::new(HeadKind::Corelnet, task.seq_len(), task.num_classes())
    };
    let train = TrainConfig { iterations: 3, eval_every: 10, eval_episodes: 64, curve_episodes: 64, ..TrainConfig::cognitive(7) };
    let frozen = train_run(&model(EncoderMode::Random), &task, &train)?;
    let learned = train_run(&model(EncoderMode::Learned), &task, &train)?;
    let again = train_run(&model(EncoderMode::Learned), &task, &train)?;
    let gen = Generator::new(task.clone())?;
    let eps_equal = gen.batch(Phase::Train, 11, 40, 8)? == Generator::new(task)?.batch(Phase::Train, 11, 40, 8)?;
    Ok(vec![
        Outcome::new(
            "random encoder checksum frozen",
            frozen.encoder_checksum_start == frozen.encoder_checksum_end,
            format!("{:016x} -> {:016x}", frozen.encoder_checksum_start, frozen.encoder_checksum_end),
        ),
        Outcome::new(
            "learned encoder checksum moves",
            learned.encoder_checksum_start != learned.encoder_checksum_end,
            format!("{:016x} -> {:016x}", learned.encoder_checksum_start, learned.encoder_checksum_end),
        ),
        Outcome::new(
            "seed determinism",
            learned.losses == again.losses
                && learned.final_test_accuracy == again.final_test_accuracy
                && learned.encoder_checksum_end == again.encoder_checksum_end
                && eps_equal,
            "identical losses, accuracies, checksums and episodes",
        ),
    ])
}
