//! Procedural object shapes and their rasterization.
//!
//! Four families: random connected blobs for the cognitive tests, free
//! pentominoes (training) and hexominoes / stripes (held-out) for the grid
//! games. All generation is a pure function of `(family, count, seed)`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of a cognitive blob mask.
pub const BLOB_RES: usize = 16;
/// Side length of polyomino and stripe masks.
pub const POLY_RES: usize = 6;
/// Minimum pairwise Hamming distance between two blob masks.
pub const BLOB_MIN_HAMMING: usize = 24;
/// Default size of the cognitive shape inventory.
pub const COGNITIVE_COUNT: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cognitive,
    Pentomino,
    Hexomino,
    Stripe,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Cognitive => "cognitive",
            Family::Pentomino => "pentomino",
            Family::Hexomino => "hexomino",
            Family::Stripe => "stripe",
        }
    }

    pub fn resolution(self) -> usize {
        match self {
            Family::Cognitive => BLOB_RES,
            _ => POLY_RES,
        }
    }

    /// Number of distinct shapes the family can supply.
    pub fn capacity(self) -> usize {
        match self {
            // Far more blobs exist; this is the inventory size we commit to.
            Family::Cognitive => 1000,
            Family::Pentomino => 12,
            Family::Hexomino => 35,
            Family::Stripe => stripe_patterns().len(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Family::Cognitive, Family::Pentomino, Family::Hexomino, Family::Stripe]
            .into_iter()
            .find(|f| f.name() == s)
    }
}

/// Square binary mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    size: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(size: usize) -> Self {
        Self { size, bits: vec![false; size * size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.size + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.size + c] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn hamming(&self, other: &Mask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }

    /// Rotates clockwise by `quarter_turns` × 90°.
    pub fn rotated(&self, quarter_turns: u8) -> Mask {
        let n = self.size;
        let mut cur = self.clone();
        for _ in 0..quarter_turns % 4 {
            let mut next = Mask::new(n);
            for r in 0..n {
                for c in 0..n {
                    // clockwise: (r, c) -> (c, n-1-r)
                    next.set(c, n - 1 - r, cur.get(r, c));
                }
            }
            cur = next;
        }
        cur
    }

    /// True when the set cells form one 4-connected component.
    pub fn is_connected(&self) -> bool {
        let n = self.size;
        let Some(start) = self.bits.iter().position(|&b| b) else { return false };
        let mut seen = vec![false; n * n];
        let mut stack = vec![start];
        seen[start] = true;
        let mut reached = 0;
        while let Some(i) = stack.pop() {
            reached += 1;
            let (r, c) = (i / n, i % n);
            let mut push = |rr: usize, cc: usize| {
                let j = rr * n + cc;
                if self.bits[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                push(r - 1, c);
            }
            if r + 1 < n {
                push(r + 1, c);
            }
            if c > 0 {
                push(r, c - 1);
            }
            if c + 1 < n {
                push(r, c + 1);
            }
        }
        reached == self.count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Glyph {
    pub id: usize,
    pub family: Family,
    pub mask: Mask,
}

impl Glyph {
    /// Smallest quarter-turn count whose rotation matches rotating by `orientation`.
    /// Two renders of one glyph look identical iff their reduced orientations agree.
    pub fn reduced_orientation(&self, orientation: u8) -> u8 {
        let target = self.mask.rotated(orientation);
        (0..4).find(|&o| self.mask.rotated(o) == target).unwrap_or(orientation % 4)
    }
}

#[derive(Clone, Debug)]
pub struct GlyphSet {
    pub family: Family,
    pub seed: u64,
    pub glyphs: Vec<Glyph>,
}

impl GlyphSet {
    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn get(&self, id: usize) -> &Glyph {
        &self.glyphs[id]
    }
}

/// Builds a glyph set. `count = None` takes the whole family (cognitive: 100).
pub fn generate_glyph_set(family: Family, count: Option<usize>, seed: u64) -> Result<GlyphSet> {
    let requested = count.unwrap_or(match family {
        Family::Cognitive => COGNITIVE_COUNT,
        f => f.capacity(),
    });
    if requested > family.capacity() {
        return Err(Error::GlyphCapacity { family: family.name(), capacity: family.capacity(), requested });
    }
    let masks: Vec<Mask> = match family {
        Family::Cognitive => blob_masks(requested, seed),
        Family::Pentomino => polyomino_masks(5),
        Family::Hexomino => polyomino_masks(6),
        Family::Stripe => stripe_patterns().iter().map(|&p| stripe_mask(p)).collect(),
    };
    let glyphs = masks
        .into_iter()
        .take(requested)
        .enumerate()
        .map(|(id, mask)| Glyph { id, family, mask })
        .collect();
    Ok(GlyphSet { family, seed, glyphs })
}

fn blob_masks(count: usize, seed: u64) -> Vec<Mask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB10B);
    let mut out: Vec<Mask> = Vec::with_capacity(count);
    while out.len() < count {
        let m = random_blob(&mut rng);
        if out.iter().all(|o| o.hamming(&m) >= BLOB_MIN_HAMMING) {
            out.push(m);
        }
    }
    out
}

/// Grows a 4-connected blob from a cell near the centre.
fn random_blob(rng: &mut ChaCha8Rng) -> Mask {
    let n = BLOB_RES;
    let target = rng.gen_range(40..=120);
    let mut m = Mask::new(n);
    let (r0, c0) = (rng.gen_range(5..11), rng.gen_range(5..11));
    m.set(r0, c0, true);
    let mut cells = vec![(r0, c0)];
    while cells.len() < target {
        let &(r, c) = cells.choose(rng).expect("non-empty");
        let (dr, dc) = [(-1i32, 0i32), (1, 0), (0, -1), (0, 1)][rng.gen_range(0..4)];
        let (nr, nc) = (r as i32 + dr, c as i32 + dc);
        if nr < 0 || nc < 0 || nr >= n as i32 || nc >= n as i32 {
            continue;
        }
        let (nr, nc) = (nr as usize, nc as usize);
        if !m.get(nr, nc) {
            m.set(nr, nc, true);
            cells.push((nr, nc));
        }
    }
    m
}

/// A polyomino as sorted cell coordinates translated to touch row 0 and column 0.
pub type Cells = Vec<(i32, i32)>;

fn normalize(cells: &[(i32, i32)]) -> Cells {
    let r0 = cells.iter().map(|c| c.0).min().unwrap_or(0);
    let c0 = cells.iter().map(|c| c.1).min().unwrap_or(0);
    let mut v: Cells = cells.iter().map(|&(r, c)| (r - r0, c - c0)).collect();
    v.sort_unstable();
    v
}

/// The 8 rotations/reflections of a cell set, each normalized.
pub fn symmetry_images(cells: &[(i32, i32)]) -> [Cells; 8] {
    let t = |f: fn(i32, i32) -> (i32, i32)| normalize(&cells.iter().map(|&(r, c)| f(r, c)).collect::<Vec<_>>());
    [
        t(|r, c| (r, c)),
        t(|r, c| (c, -r)),
        t(|r, c| (-r, -c)),
        t(|r, c| (-c, r)),
        t(|r, c| (r, -c)),
        t(|r, c| (-c, -r)),
        t(|r, c| (-r, c)),
        t(|r, c| (c, r)),
    ]
}

/// Lexicographically smallest of the 8 symmetry images.
pub fn canonical(cells: &[(i32, i32)]) -> Cells {
    symmetry_images(cells).into_iter().min().expect("eight images")
}

/// One canonical representative per free polyomino with `k` cells (1 ≤ k ≤ 6),
/// grown cell by cell from the (k-1)-ominoes.
pub fn enumerate_polyominoes(k: usize) -> Vec<Cells> {
    assert!((1..=6).contains(&k), "polyomino size must be in 1..=6");
    let mut level: BTreeSet<Cells> = BTreeSet::from([vec![(0, 0)]]);
    for _ in 1..k {
        let mut next = BTreeSet::new();
        for poly in &level {
            for &(r, c) in poly {
                for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    let cell = (r + dr, c + dc);
                    if poly.contains(&cell) {
                        continue;
                    }
                    let mut grown = poly.clone();
                    grown.push(cell);
                    next.insert(canonical(&grown));
                }
            }
        }
        level = next;
    }
    level.into_iter().collect()
}

fn polyomino_masks(k: usize) -> Vec<Mask> {
    enumerate_polyominoes(k)
        .into_iter()
        .map(|cells| {
            let h = cells.iter().map(|c| c.0).max().unwrap_or(0) as usize + 1;
            let w = cells.iter().map(|c| c.1).max().unwrap_or(0) as usize + 1;
            let (or, oc) = ((POLY_RES - h) / 2, (POLY_RES - w) / 2);
            let mut m = Mask::new(POLY_RES);
            for (r, c) in cells {
                m.set(or + r as usize, oc + c as usize, true);
            }
            m
        })
        .collect()
}

/// Row on/off patterns (bit r = row r lit), one per class under vertical flip,
/// excluding blank and solid masks.
fn stripe_patterns() -> Vec<u8> {
    let rev = |p: u8| (0..POLY_RES).fold(0u8, |acc, r| acc | (((p >> r) & 1) << (POLY_RES - 1 - r)));
    let full = (1u8 << POLY_RES) - 1;
    (1..full).filter(|&p| p <= rev(p)).collect()
}

fn stripe_mask(pattern: u8) -> Mask {
    let mut m = Mask::new(POLY_RES);
    for r in 0..POLY_RES {
        if (pattern >> r) & 1 == 1 {
            for c in 0..POLY_RES {
                m.set(r, c, true);
            }
        }
    }
    m
}

// ----- colours ---------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub const BLACK: Rgb = Rgb(0, 0, 0);
    pub const WHITE: Rgb = Rgb(255, 255, 255);

    /// Rec. 601 luma.
    pub fn luminance(self) -> f64 {
        0.299 * self.0 as f64 + 0.587 * self.1 as f64 + 0.114 * self.2 as f64
    }
}

/// Foreground palette for the grid games; all luminances are distinct.
pub const GAME_PALETTE: [Rgb; 8] = [
    Rgb(255, 0, 0),
    Rgb(0, 255, 0),
    Rgb(0, 0, 255),
    Rgb(255, 255, 0),
    Rgb(255, 0, 255),
    Rgb(0, 255, 255),
    Rgb(255, 128, 0),
    Rgb(255, 255, 255),
];

/// `n` fully saturated colours at evenly spaced hues.
pub fn hue_palette(n: usize) -> Vec<Rgb> {
    (0..n)
        .map(|i| {
            let h = 6.0 * i as f64 / n as f64;
            let x = 1.0 - ((h % 2.0) - 1.0).abs();
            let (r, g, b) = match h as usize {
                0 => (1.0, x, 0.0),
                1 => (x, 1.0, 0.0),
                2 => (0.0, 1.0, x),
                3 => (0.0, x, 1.0),
                4 => (x, 0.0, 1.0),
                _ => (1.0, 0.0, x),
            };
            let q = |v: f64| (v * 255.0).round() as u8;
            Rgb(q(r), q(g), q(b))
        })
        .collect()
}

/// Size of the spurious background-colour palette.
pub const SPURIOUS_COLORS: usize = 100;

// ----- rendering -------------------------------------------------------------

/// 8-bit RGB image, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn filled(height: usize, width: usize, color: Rgb) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&[color.0, color.1, color.2]);
        }
        Self { height, width, data }
    }

    pub fn pixel(&self, r: usize, c: usize) -> Rgb {
        let i = (r * self.width + c) * 3;
        Rgb(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn put(&mut self, r: usize, c: usize, color: Rgb) {
        let i = (r * self.width + c) * 3;
        self.data[i..i + 3].copy_from_slice(&[color.0, color.1, color.2]);
    }

    pub fn distinct_pixels(&self) -> usize {
        self.data.chunks(3).collect::<BTreeSet<_>>().len()
    }

    /// Rotates clockwise by quarter turns (square images only).
    pub fn rotated(&self, quarter_turns: u8) -> Image {
        assert_eq!(self.height, self.width);
        let n = self.height;
        let mut cur = self.clone();
        for _ in 0..quarter_turns % 4 {
            let mut next = cur.clone();
            for r in 0..n {
                for c in 0..n {
                    next.put(c, n - 1 - r, cur.pixel(r, c));
                }
            }
            cur = next;
        }
        cur
    }

    /// Cuts into `k × k` equal tiles in row-major order.
    pub fn tiles(&self, k: usize) -> Vec<Image> {
        let (th, tw) = (self.height / k, self.width / k);
        let mut out = Vec::with_capacity(k * k);
        for tr in 0..k {
            for tc in 0..k {
                let mut tile = Image::filled(th, tw, Rgb::BLACK);
                for r in 0..th {
                    for c in 0..tw {
                        tile.put(r, c, self.pixel(tr * th + r, tc * tw + c));
                    }
                }
                out.push(tile);
            }
        }
        out
    }

    /// Planar channel-major floats in [0, 1], appended to `out`.
    pub fn write_chw<F: corelnet_autograd::Real>(&self, out: &mut Vec<F>) {
        let inv = 1.0 / 255.0;
        for ch in 0..3 {
            for p in 0..self.height * self.width {
                out.push(F::of(self.data[p * 3 + ch] as f64 * inv));
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    Full,
    /// Cell `(row, col)` of a 3×3 grid.
    Cell(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenderSpec {
    /// Side of the output image in pixels (the whole grid for `Cell` placement).
    pub canvas: usize,
    pub foreground: Rgb,
    pub background: Rgb,
    /// Clockwise quarter turns.
    pub orientation: u8,
    pub placement: Placement,
}

impl RenderSpec {
    pub fn full(canvas: usize, foreground: Rgb, background: Rgb) -> Self {
        Self { canvas, foreground, background, orientation: 0, placement: Placement::Full }
    }
}

pub const GRID: usize = 3;

/// Renders one glyph onto a fresh background canvas.
pub fn render_object(glyph: &Glyph, spec: &RenderSpec) -> Result<Image> {
    let mut img = Image::filled(spec.canvas, spec.canvas, spec.background);
    render_into(&mut img, glyph, spec)?;
    Ok(img)
}

/// Draws a glyph into an existing canvas (used to compose grids).
pub fn render_into(img: &mut Image, glyph: &Glyph, spec: &RenderSpec) -> Result<()> {
    if spec.orientation > 3 {
        return Err(Error::Render(format!("orientation {} is not a quarter-turn index", spec.orientation)));
    }
    let (side, r0, c0) = match spec.placement {
        Placement::Full => (spec.canvas, 0, 0),
        Placement::Cell(r, c) => {
            if r >= GRID || c >= GRID {
                return Err(Error::Render(format!("grid cell ({r}, {c}) outside [0,3)x[0,3)")));
            }
            if !spec.canvas.is_multiple_of(GRID) {
                return Err(Error::Render(format!("canvas {} not divisible into a 3x3 grid", spec.canvas)));
            }
            let s = spec.canvas / GRID;
            (s, r * s, c * s)
        }
    };
    let res = glyph.mask.size();
    if side % res != 0 {
        return Err(Error::Render(format!("cell of {side}px is not a multiple of glyph resolution {res}")));
    }
    let scale = side / res;
    let mask = glyph.mask.rotated(spec.orientation);
    for r in 0..side {
        for c in 0..side {
            let color = if mask.get(r / scale, c / scale) { spec.foreground } else { spec.background };
            img.put(r0 + r, c0 + c, color);
        }
    }
    Ok(())
}

/// Solid colour swatch (used by the separated-inputs task).
pub fn render_swatch(canvas: usize, color: Rgb) -> Image {
    Image::filled(canvas, canvas, color)
}

/// Lays glyph masks side by side into a contact sheet for documentation.
pub fn contact_sheet(set: &GlyphSet, per_row: usize, cell: usize) -> Result<Image> {
    let rows = set.len().div_ceil(per_row).max(1);
    let pad = 2;
    let mut img = Image::filled(rows * (cell + pad) + pad, per_row * (cell + pad) + pad, Rgb(40, 40, 40));
    for (i, g) in set.glyphs.iter().enumerate() {
        let tile = render_object(g, &RenderSpec::full(cell, Rgb::WHITE, Rgb::BLACK))?;
        let (r0, c0) = (pad + (i / per_row) * (cell + pad), pad + (i % per_row) * (cell + pad));
        for r in 0..cell {
            for c in 0..cell {
                img.put(r0 + r, c0 + c, tile.pixel(r, c));
            }
        }
    }
    Ok(img)
}

/// Binary PPM (P6) encoding.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyomino_counts() {
        let counts: Vec<usize> = (1..=6).map(|k| enumerate_polyominoes(k).len()).collect();
        assert_eq!(counts, vec![1, 1, 2, 5, 12, 35]);
    }

    #[test]
    fn family_sizes() {
        assert_eq!(generate_glyph_set(Family::Pentomino, None, 0).unwrap().len(), 12);
        assert_eq!(generate_glyph_set(Family::Hexomino, None, 0).unwrap().len(), 35);
        assert_eq!(generate_glyph_set(Family::Stripe, None, 0).unwrap().len(), 34);
        assert_eq!(generate_glyph_set(Family::Cognitive, None, 0).unwrap().len(), 100);
    }

    #[test]
    fn capacity_is_enforced() {
        match generate_glyph_set(Family::Pentomino, Some(13), 0) {
            Err(Error::GlyphCapacity { capacity, .. }) => assert_eq!(capacity, 12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn blob_set_is_deterministic_and_separated() {
        let a = generate_glyph_set(Family::Cognitive, Some(100), 9).unwrap();
        let b = generate_glyph_set(Family::Cognitive, Some(100), 9).unwrap();
        assert_eq!(a.glyphs, b.glyphs);
        for i in 0..a.len() {
            assert!(a.glyphs[i].mask.is_connected());
            for j in 0..i {
                assert!(a.glyphs[i].mask.hamming(&a.glyphs[j].mask) >= BLOB_MIN_HAMMING);
            }
        }
        let c = generate_glyph_set(Family::Cognitive, Some(100), 10).unwrap();
        assert_ne!(a.glyphs, c.glyphs);
    }

    #[test]
    fn polyomino_masks_are_connected_and_distinct() {
        for fam in [Family::Pentomino, Family::Hexomino] {
            let set = generate_glyph_set(fam, None, 0).unwrap();
            for (i, g) in set.glyphs.iter().enumerate() {
                assert!(g.mask.is_connected());
                for h in &set.glyphs[..i] {
                    // distinct under every rotation pairing
                    for o in 0..4 {
                        assert_ne!(g.mask.rotated(o), h.mask);
                    }
                }
            }
        }
    }

    #[test]
    fn white_on_black_has_two_values() {
        let set = generate_glyph_set(Family::Cognitive, Some(5), 1).unwrap();
        for g in &set.glyphs {
            let img = render_object(g, &RenderSpec::full(32, Rgb::WHITE, Rgb::BLACK)).unwrap();
            assert_eq!(img.distinct_pixels(), 2);
        }
    }

    #[test]
    fn background_change_only_touches_mask_zero_pixels() {
        let set = generate_glyph_set(Family::Cognitive, Some(1), 2).unwrap();
        let g = &set.glyphs[0];
        let a = render_object(g, &RenderSpec::full(32, Rgb::WHITE, Rgb(10, 200, 30))).unwrap();
        let b = render_object(g, &RenderSpec::full(32, Rgb::WHITE, Rgb(200, 10, 90))).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                let on = g.mask.get(r / 2, c / 2);
                assert_eq!(a.pixel(r, c) == b.pixel(r, c), on);
            }
        }
    }

    #[test]
    fn stripes_render_as_full_width_bars() {
        let set = generate_glyph_set(Family::Stripe, None, 0).unwrap();
        for g in &set.glyphs {
            let img = render_object(g, &RenderSpec::full(12, Rgb::WHITE, Rgb::BLACK)).unwrap();
            let mut lit_rows = 0;
            for r in 0..12 {
                let row: BTreeSet<(u8, u8, u8)> = (0..12).map(|c| img.pixel(r, c)).map(|p| (p.0, p.1, p.2)).collect();
                assert_eq!(row.len(), 1, "row {r} is not a uniform bar");
                if row.contains(&(255, 255, 255)) {
                    lit_rows += 1;
                }
            }
            assert!(lit_rows > 0 && lit_rows < 12);
        }
    }

    #[test]
    fn rotation_closure() {
        for fam in [Family::Cognitive, Family::Pentomino, Family::Stripe] {
            let set = generate_glyph_set(fam, Some(5), 3).unwrap();
            let canvas = if fam == Family::Cognitive { 32 } else { 12 };
            for g in &set.glyphs {
                let base = render_object(g, &RenderSpec::full(canvas, Rgb(1, 2, 3), Rgb(9, 8, 7))).unwrap();
                for o in 0..4 {
                    let spec = RenderSpec { orientation: o, ..RenderSpec::full(canvas, Rgb(1, 2, 3), Rgb(9, 8, 7)) };
                    assert_eq!(render_object(g, &spec).unwrap(), base.rotated(o));
                }
            }
        }
    }

    #[test]
    fn grid_cell_bounds() {
        let set = generate_glyph_set(Family::Pentomino, None, 0).unwrap();
        let spec = RenderSpec { placement: Placement::Cell(3, 0), ..RenderSpec::full(36, Rgb::WHITE, Rgb::BLACK) };
        assert!(render_object(&set.glyphs[0], &spec).is_err());
        let spec = RenderSpec { placement: Placement::Cell(2, 1), ..spec };
        let img = render_object(&set.glyphs[0], &spec).unwrap();
        let tiles = img.tiles(3);
        assert_eq!(tiles[7].distinct_pixels(), 2);
        assert!(tiles.iter().enumerate().all(|(i, t)| i == 7 || t.distinct_pixels() == 1));
    }

    #[test]
    fn palettes_are_distinct() {
        let hues = hue_palette(SPURIOUS_COLORS);
        let set: BTreeSet<_> = hues.iter().map(|c| (c.0, c.1, c.2)).collect();
        assert_eq!(set.len(), SPURIOUS_COLORS);
        let lum: BTreeSet<u64> = GAME_PALETTE.iter().map(|c| (c.luminance() * 1000.0) as u64).collect();
        assert_eq!(lum.len(), GAME_PALETTE.len());
    }

    #[test]
    fn reduced_orientation_detects_symmetry() {
        let set = generate_glyph_set(Family::Stripe, None, 0).unwrap();
        // A palindromic stripe looks the same upside down but not on its side.
        let pal = set.glyphs.iter().find(|g| g.mask.rotated(2) == g.mask).expect("palindromic stripe");
        assert_eq!(pal.reduced_orientation(2), 0);
        assert_eq!(pal.reduced_orientation(3), 1);
        let asym = set.glyphs.iter().find(|g| g.mask.rotated(2) != g.mask).unwrap();
        assert_eq!((0..4).map(|o| asym.reduced_orientation(o)).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }
}
