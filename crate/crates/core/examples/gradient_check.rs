//! Finite-difference gradient checks for every primitive and every model head.
//!
//! cargo run --release -p corelnet --example gradient_check -- [trials]

use corelnet::checks::{self, Outcome};

fn main() {
    let trials: usize = std::env::args().nth(1).map_or(checks::GRAD_TRIALS, |s| s.parse().expect("trials"));
    let mut worst_ok = true;
    let mut show = |o: Outcome| {
        worst_ok &= o.passed;
        println!("{}  {:<40} {}", if o.passed { "ok  " } else { "FAIL" }, o.name, o.detail);
    };
    for r in checks::primitive_gradients(trials, 1) {
        show(Outcome::from(&r));
    }
    for (name, cfg, l1) in checks::gradient_arms() {
        show(Outcome::from(&checks::head_gradient(&name, &cfg, l1, trials, checks::GRAD_EPS, 2)));
    }
    println!("{}", if worst_ok { "all gradients agree" } else { "gradient mismatch" });
}
