//! Writes a PPM contact sheet for every glyph family.
//!
//! cargo run --release -p corelnet --example glyph_sheet -- [out_dir] [seed]

use std::path::PathBuf;

use corelnet::glyphs::{contact_sheet, encode_ppm, generate_glyph_set, Family};

fn main() -> corelnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "glyphs".into()));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    std::fs::create_dir_all(&out)?;
    for family in [Family::Cognitive, Family::Pentomino, Family::Hexomino, Family::Stripe] {
        let set = generate_glyph_set(family, None, seed)?;
        let cell = family.resolution() * (32 / family.resolution());
        let sheet = contact_sheet(&set, 10, cell)?;
        let path = out.join(format!("{}.ppm", family.name()));
        std::fs::write(&path, encode_ppm(&sheet))?;
        println!("{:<10} {:>3} glyphs -> {}", family.name(), set.len(), path.display());
    }
    Ok(())
}
