use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use corelnet::checks::{self, Outcome};
use corelnet::harness::{
    default_out_dir, emit_report, export_dataset, load_reports, parse_phase, run_cells, run_matrix, ExperimentMatrix,
    ReportKind, Settings,
};
use corelnet::training::train_model;
use corelnet::Result;

#[derive(Parser)]
#[command(name = "corelnet", about = "Relational reasoning tasks, models and experiment sweeps")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set m=95`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// CI profile: 1500 iterations, 5 seeds, 16px images, two conv layers.
    #[arg(long)]
    fast: bool,
}

impl ConfigArgs {
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::new(),
        };
        if self.fast {
            s.set("profile", "fast")?;
        }
        for kv in &self.sets {
            s.apply_override(kv)?;
        }
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Export a frozen dataset in the CRNL format.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// train, heldout, hexomino or stripe.
        #[arg(long, default_value = "train")]
        phase: String,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a single run and print its learning curve.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Write the trained parameters here.
        #[arg(long)]
        save: Option<PathBuf>,
        /// Also record the run under the output root.
        #[arg(long)]
        record: bool,
    },
    /// Run every cell of an experiment matrix, resuming from cached runs.
    Matrix {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        jobs: Option<usize>,
        /// Output root (defaults to $CORELNET_OUT or ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write tables and sweep plots for the runs under an output root.
    Report {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Gradient, oracle and invariant self-checks.
    Check {
        /// Fewer trials and episodes.
        #[arg(long)]
        quick: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Gen { cfg, phase, count, seed, out } => {
            let spec = cfg.settings()?.resolve(None)?;
            let d = export_dataset(&spec.task, parse_phase(&phase)?, count, seed, &out)?;
            println!("wrote {} {} episodes ({}x{}) to {}", d.episodes.len(), d.task, d.height, d.width, out.display());
        }
        Cmd::Train { cfg, save, record } => {
            let spec = cfg.settings()?.resolve(None)?;
            println!("{} / {} / m = {} / seed {}", spec.task.kind, spec.model.head, spec.task.m, spec.train.seed);
            if record {
                let out = run_cells(&[spec], &default_out_dir(), 1, |l| eprintln!("{l}"))?;
                let r = &out.reports[0];
                println!("test {:?}  train {:.3}", r.final_test_accuracy, r.final_train_accuracy);
                return Ok(r.status.is_ok());
            }
            let run = train_model(&spec.model, &spec.task, &spec.train, |p| {
                println!("{:>6}  train {:.3}  test {:?}", p.iteration, p.train_accuracy, p.test_accuracy);
            })?;
            if let Some(path) = save {
                run.model.save(&path)?;
                println!("saved {}", path.display());
            }
            println!("{:.1}s", run.report.wall_seconds);
            return Ok(run.report.status.is_ok());
        }
        Cmd::Matrix { cfg, jobs, out } => {
            let mut m = ExperimentMatrix::from_settings(&cfg.settings()?, out.unwrap_or_else(default_out_dir))?;
            if let Some(j) = jobs {
                m.jobs = j.max(1);
            }
            let o = run_matrix(&m, |l| eprintln!("{l}"))?;
            println!("{} cells: {} trained, {} reused", o.reports.len(), o.trained, o.reused);
            for f in emit_report(&o.reports, ReportKind::Table, &o.dir)?
                .into_iter()
                .chain(emit_report(&o.reports, ReportKind::SweepPlot, &o.dir)?)
            {
                println!("wrote {}", f.display());
            }
        }
        Cmd::Report { dir } => {
            let dir = dir.unwrap_or_else(default_out_dir);
            let reports = load_reports(&dir)?;
            corelnet::harness::write_run_tables(&reports, &dir)?;
            for kind in [ReportKind::Table, ReportKind::SweepPlot] {
                for f in emit_report(&reports, kind, &dir)? {
                    println!("wrote {}", f.display());
                }
            }
        }
        Cmd::Check { quick } => return check(quick),
    }
    Ok(true)
}

fn check(quick: bool) -> Result<bool> {
    let (trials, episodes, cases) = if quick { (10, 1000, 10) } else { (checks::GRAD_TRIALS, 10_000, 50) };
    let mut all = true;
    let mut show = |o: &Outcome| {
        all &= o.passed;
        println!("{}  {:<48} {}", if o.passed { "ok  " } else { "FAIL" }, o.name, o.detail);
    };
    for r in checks::primitive_gradients(trials, 1) {
        show(&Outcome::from(&r));
    }
    for (name, cfg, l1) in checks::gradient_arms() {
        show(&Outcome::from(&checks::head_gradient(&name, &cfg, l1, trials, checks::GRAD_EPS, 2)));
    }
    for cfg in checks::task_families() {
        let s = checks::oracle_suite(&cfg, episodes, 3)?;
        let detail = format!(
            "{}/{} agree, balance dev {:.4}, {} hygiene, {} image mismatches {}",
            s.agree,
            s.episodes,
            s.balance_dev,
            s.hygiene_violations,
            s.image_mismatches,
            s.errors.first().map(String::as_str).unwrap_or("")
        );
        show(&Outcome { name: format!("oracle {}", s.task), passed: s.passed(), detail });
    }
    for o in checks::invariant_suite(cases, 4)? {
        show(&o);
    }
    println!("{}", if all { "all checks passed" } else { "some checks FAILED" });
    Ok(all)
}
