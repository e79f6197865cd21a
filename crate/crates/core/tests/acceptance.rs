//! Acceptance criteria 1-10, one PASS/FAIL line each.
//!
//! Training criteria run through the harness cache under `$CORELNET_OUT`
//! (default `target/acceptance`), so a rerun only trains missing cells.
//! A failing criterion is reported but only fails the process when
//! `CORELNET_STRICT=1`.

use std::path::PathBuf;
use std::time::Instant;

use corelnet::checks::{self, GRAD_EPS, GRAD_TOL, GRAD_TRIALS};
use corelnet::harness::{emit_report, mean_std, run_cells, ReportKind, RunSpec, Settings, OUT_ENV};
use corelnet::training::RunReport;

const GRAD_BUDGET_S: f64 = 300.0;
const ORACLE_EPISODES: usize = 10_000;
const ORACLE_BUDGET_S: f64 = 600.0;
const INVARIANT_CASES: usize = 50;
const INVARIANT_BUDGET_S: f64 = 120.0;

const SAME_DIFF_FLOOR: f64 = 0.95;
const SYMMETRY_GAP: f64 = 0.10;
const RANDOM_ENCODER_BAND: f64 = 0.05;
const SPURIOUS_RANDOM_CEILING: f64 = 0.65;
const ROW_MATCHING_CORELNET_FLOOR: f64 = 0.90;
const ROW_MATCHING_TRANSFORMER_CEILING: f64 = 0.60;
const RMTS3_FLOOR: f64 = 0.90;
const IR4_MISSING_CEILING: f64 = 0.90;

struct Verdict {
    id: usize,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance"))
}

fn spec(pairs: &[(&str, &str)], seed: u64) -> RunSpec {
    let mut s = Settings::new();
    for (k, v) in pairs {
        s.set(k, v).unwrap();
    }
    s.resolve(Some(seed)).unwrap()
}

fn arm(pairs: &[(&str, &str)], seeds: std::ops::Range<u64>) -> Vec<RunSpec> {
    seeds.map(|s| spec(pairs, s)).collect()
}

/// Trains (or reloads) the cells and returns their reports.
fn runs(name: &str, cells: &[RunSpec]) -> Vec<RunReport> {
    let dir = out_dir().join(name);
    let out = run_cells(cells, &dir, 1, |l| eprintln!("[{name}] {l}")).expect("matrix runs");
    emit_report(&out.reports, ReportKind::Table, &dir).expect("table");
    emit_report(&out.reports, ReportKind::SweepPlot, &dir).expect("plot");
    out.reports
}

fn accuracies(reports: &[RunReport], set: &str) -> Vec<f64> {
    reports.iter().map(|r| r.final_test_accuracy[set]).collect()
}

fn summary(xs: &[f64]) -> (f64, String) {
    let (m, s) = mean_std(xs);
    (m, format!("{m:.3} ± {s:.3} (n={})", xs.len()))
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let mut worst = (String::new(), 0.0f64);
    let mut failed = Vec::new();
    let mut reports = checks::primitive_gradients(GRAD_TRIALS, 1);
    for (name, cfg, l1) in checks::gradient_arms() {
        reports.push(checks::head_gradient(&name, &cfg, l1, GRAD_TRIALS, GRAD_EPS, 2));
    }
    for r in &reports {
        if r.max_rel_error > worst.1 {
            worst = (r.name.clone(), r.max_rel_error);
        }
        if !r.passed || r.trials < GRAD_TRIALS {
            failed.push(r.name.clone());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Verdict {
        id: 1,
        title: "gradient oracle",
        passed: failed.is_empty() && secs < GRAD_BUDGET_S,
        detail: format!(
            "{} checks x {GRAD_TRIALS} trials, worst {} at {:.2e} (< {GRAD_TOL:.0e}), {secs:.0}s{}",
            reports.len(),
            worst.0,
            worst.1,
            if failed.is_empty() { String::new() } else { format!(", failing: {failed:?}") }
        ),
    }
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let mut failed = Vec::new();
    let families = checks::task_families();
    let mut total = 0;
    for cfg in &families {
        let s = checks::oracle_suite(cfg, ORACLE_EPISODES, 2024).expect("oracle suite");
        total += s.episodes;
        if !s.passed() || s.episodes < ORACLE_EPISODES {
            failed.push(format!("{}: {}/{} {:?}", s.task, s.agree, s.episodes, s.errors.first()));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Verdict {
        id: 2,
        title: "task oracle, split hygiene, balance",
        passed: failed.is_empty() && secs < ORACLE_BUDGET_S,
        detail: format!(
            "{} families, {total} episodes, {secs:.0}s{}",
            families.len(),
            if failed.is_empty() { String::new() } else { format!(", failing: {failed:?}") }
        ),
    }
}

fn criterion_3_4() -> (Verdict, Verdict) {
    let base = [("task", "same_diff"), ("m", "95"), ("model", "corelnet")];
    let sym = runs("same_diff_m95", &arm(&base, 0..10));
    let (mean, text) = summary(&accuracies(&sym, "heldout"));
    let v3 = Verdict {
        id: 3,
        title: "same/different OoD, m = 95, full settings",
        passed: mean >= SAME_DIFF_FLOOR,
        detail: format!("CoRelNet {text} (need >= {SAME_DIFF_FLOOR})"),
    };
    let asym = runs("same_diff_m95_asymmetric", &arm(&[base[0], base[1], base[2], ("similarity", "asymmetric")], 0..5));
    let (ms, ts) = summary(&accuracies(&sym[..5], "heldout"));
    let (ma, ta) = summary(&accuracies(&asym, "heldout"));
    let v4 = Verdict {
        id: 4,
        title: "symmetry ablation",
        passed: ms - ma >= SYMMETRY_GAP,
        detail: format!("symmetric {ts} vs asymmetric {ta}, gap {:.3} (need >= {SYMMETRY_GAP})", ms - ma),
    };
    (v3, v4)
}

const FAST: (&str, &str) = ("profile", "fast");

/// The four basic tasks at their largest holdout.
const BASIC: [(&str, &str); 4] = [("same_diff", "98"), ("rmts", "95"), ("dist3", "95"), ("identity_rules", "95")];

fn criterion_5() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for (task, m) in &BASIC[..2] {
        let base = [FAST, ("task", task), ("m", m)];
        let learned = runs(&format!("{task}_m{m}_fast"), &arm(&base, 0..5));
        let random = runs(&format!("{task}_m{m}_fast_random"), &arm(&[base[0], base[1], base[2], ("encoder", "random")], 0..5));
        let (ml, tl) = summary(&accuracies(&learned, "heldout"));
        let (mr, tr) = summary(&accuracies(&random, "heldout"));
        ok &= (mr - ml).abs() <= RANDOM_ENCODER_BAND;
        parts.push(format!("{task}: learned {tl}, random {tr}, |diff| {:.3}", (mr - ml).abs()));
    }
    Verdict {
        id: 5,
        title: "random-encoder ablation (fast profile)",
        passed: ok,
        detail: format!("{} (need <= {RANDOM_ENCODER_BAND})", parts.join("; ")),
    }
}

fn criterion_6() -> Verdict {
    let (mut rel, mut cat) = (Vec::new(), Vec::new());
    let mut parts = Vec::new();
    for (task, m) in &BASIC {
        let base = [FAST, ("task", task), ("m", m)];
        let r = runs(&format!("{task}_m{m}_fast"), &arm(&base, 0..5));
        let c = runs(&format!("{task}_m{m}_fast_sensory"), &arm(&[base[0], base[1], base[2], ("concat_sensory", "true")], 0..5));
        let (mr, _) = summary(&accuracies(&r, "heldout"));
        let (mc, _) = summary(&accuracies(&c, "heldout"));
        rel.push(mr);
        cat.push(mc);
        parts.push(format!("{task} {mr:.3}/{mc:.3}"));
    }
    let (mr, mc) = (mean_std(&rel).0, mean_std(&cat).0);
    Verdict {
        id: 6,
        title: "sensory concatenation ablation (fast profile)",
        passed: mr >= mc,
        detail: format!("relational-only {mr:.3} vs +sensory {mc:.3} [{}]", parts.join(", ")),
    }
}

fn criterion_7() -> Verdict {
    let base = [FAST, ("task", "same_diff"), ("m", "98"), ("spurious", "true")];
    let with = |extra: (&'static str, &'static str)| [base[0], base[1], base[2], base[3], extra];
    let learned = runs("same_diff_colour_m98_fast", &arm(&base, 0..5));
    let random = runs("same_diff_colour_m98_fast_random", &arm(&with(("encoder", "random")), 0..5));
    let l1 = runs("same_diff_colour_m98_fast_l1", &arm(&with(("l1_lambda", "1")), 0..5));
    let (ml, tl) = summary(&accuracies(&learned, "heldout"));
    let (mr, tr) = summary(&accuracies(&random, "heldout"));
    let (m1, t1) = summary(&accuracies(&l1, "heldout"));
    Verdict {
        id: 7,
        title: "spurious features (fast profile)",
        passed: mr <= SPURIOUS_RANDOM_CEILING && m1 > ml,
        detail: format!(
            "random encoder {tr} (need <= {SPURIOUS_RANDOM_CEILING}); L1 lambda=1 {t1} vs unregularized {tl} (need L1 > unregularized)"
        ),
    }
}

fn criterion_8() -> Verdict {
    let base = [("task", "rg_row_matching")];
    let corelnet = runs("rg_row_matching", &arm(&[base[0], ("model", "corelnet")], 0..5));
    let transformer = runs("rg_row_matching_transformer", &arm(&[base[0], ("model", "transformer")], 0..5));
    let (mc, tc) = summary(&accuracies(&corelnet, "hexomino"));
    let (mt, tt) = summary(&accuracies(&transformer, "hexomino"));
    Verdict {
        id: 8,
        title: "relational games row matching, hexominoes",
        passed: mc >= ROW_MATCHING_CORELNET_FLOOR && mt <= ROW_MATCHING_TRANSFORMER_CEILING,
        detail: format!(
            "CoRelNet {tc} (need >= {ROW_MATCHING_CORELNET_FLOOR}), Transformer {tt} (need <= {ROW_MATCHING_TRANSFORMER_CEILING})"
        ),
    }
}

fn criterion_9() -> Verdict {
    let rmts3 = runs("rmts3_m94_fast", &arm(&[FAST, ("task", "rmts3"), ("m", "94")], 0..5));
    let ir4 = runs(
        "identity_rules4_missing_m94_fast",
        &arm(&[FAST, ("task", "identity_rules4"), ("variant", "missing"), ("m", "94")], 0..5),
    );
    let (m3, t3) = summary(&accuracies(&rmts3, "heldout"));
    let (m4, t4) = summary(&accuracies(&ir4, "heldout"));
    Verdict {
        id: 9,
        title: "unseen relations (fast profile)",
        passed: m3 >= RMTS3_FLOOR && m4 < IR4_MISSING_CEILING && m4 < m3,
        detail: format!(
            "RMTS3 {t3} (need >= {RMTS3_FLOOR}); identity rules 4 [missing] {t4} (need < {IR4_MISSING_CEILING} and below RMTS3)"
        ),
    }
}

fn criterion_10() -> Verdict {
    let t = Instant::now();
    let outcomes = checks::invariant_suite(INVARIANT_CASES, 10).expect("invariant suite");
    let secs = t.elapsed().as_secs_f64();
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| format!("{}: {}", o.name, o.detail)).collect();
    Verdict {
        id: 10,
        title: "structural invariants",
        passed: failed.is_empty() && secs < INVARIANT_BUDGET_S,
        detail: format!(
            "{} invariants x {INVARIANT_CASES} cases, {secs:.1}s{}",
            outcomes.len(),
            if failed.is_empty() { String::new() } else { format!(", failing: {failed:?}") }
        ),
    }
}

fn main() {
    // `cargo test -- --list` and filters from the libtest protocol
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if args.iter().any(|a| !a.starts_with('-') && !"acceptance".contains(a.as_str())) {
        return;
    }
    let only: Option<Vec<usize>> =
        std::env::var("CORELNET_CRITERIA").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let want = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));

    let mut verdicts = Vec::new();
    let mut report = |v: Verdict| {
        println!("criterion {:>2} [{}]: {}  {}", v.id, v.title, if v.passed { "PASS" } else { "FAIL" }, v.detail);
        verdicts.push(v.passed);
    };
    if want(1) {
        report(criterion_1());
    }
    if want(2) {
        report(criterion_2());
    }
    if want(10) {
        report(criterion_10());
    }
    if want(3) || want(4) {
        let (v3, v4) = criterion_3_4();
        if want(3) {
            report(v3);
        }
        if want(4) {
            report(v4);
        }
    }
    let rest: [(usize, fn() -> Verdict); 5] =
        [(5, criterion_5), (6, criterion_6), (7, criterion_7), (8, criterion_8), (9, criterion_9)];
    for (i, f) in rest {
        if want(i) {
            report(f());
        }
    }
    let failed = verdicts.iter().filter(|p| !**p).count();
    println!("acceptance: {} of {} criteria pass", verdicts.len() - failed, verdicts.len());
    if failed > 0 && std::env::var("CORELNET_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
