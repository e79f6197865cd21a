//! Samples boards from each grid game and writes them as PPM images.
//!
//! cargo run --release -p corelnet --example relational_games -- [out_dir] [per_rule]

use std::path::PathBuf;

use corelnet::glyphs::{encode_ppm, Image, Rgb};
use corelnet::tasks::{gen_relational_game, Episode, Phase, Rule, TestSet, CELL};

/// Reassembles the nine cell images into one board with 1px grid lines.
fn board(ep: &Episode) -> Image {
    let side = 3 * CELL + 4;
    let mut img = Image::filled(side, side, Rgb(90, 90, 90));
    for (i, cell) in ep.images.iter().enumerate() {
        let (r0, c0) = (1 + (i / 3) * (CELL + 1), 1 + (i % 3) * (CELL + 1));
        for r in 0..CELL {
            for c in 0..CELL {
                img.put(r0 + r, c0 + c, cell.pixel(r, c));
            }
        }
    }
    img
}

fn main() -> corelnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "boards".into()));
    let per_rule: usize = args.next().map_or(4, |s| s.parse().expect("count"));
    std::fs::create_dir_all(&out)?;
    for rule in Rule::ALL {
        for (phase, tag) in [(Phase::Train, "pentomino"), (Phase::Test(TestSet::Stripe), "stripe")] {
            for (i, ep) in gen_relational_game(rule, phase, per_rule, 0)?.iter().enumerate() {
                let path = out.join(format!("{}_{tag}_{i}_label{}.ppm", rule.name(), ep.label));
                std::fs::write(&path, encode_ppm(&board(ep)))?;
                println!("{:<13} {:<9} label {}  {}", rule.name(), tag, ep.label, ep.meta.pattern);
            }
        }
    }
    Ok(())
}
