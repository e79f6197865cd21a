//! Episode generators for every relational task, shape/relation holdout
//! splits, and an oracle that relabels episodes from their metadata.
//!
//! Every episode is a pure function of `(config, phase, seed, index)`. Labels
//! are balanced in blocks of `num_classes` consecutive indices: block `b`
//! draws a permutation of the classes and index `b·k + j` gets entry `j`.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{task_err, Error, Result};
use crate::glyphs::{
    generate_glyph_set, hue_palette, render_object, render_swatch, Family, GlyphSet, Image, Rgb, RenderSpec,
    GAME_PALETTE, SPURIOUS_COLORS,
};

/// Number of cognitive shapes.
pub const N_SHAPES: usize = 100;
/// Side of one Relational Games cell image.
pub const CELL: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Same,
    Between,
    Occurs,
    Xoccurs,
    RowMatching,
    ColourShape,
    LeftOf,
}

impl Rule {
    pub const ALL: [Rule; 7] =
        [Rule::Same, Rule::Between, Rule::Occurs, Rule::Xoccurs, Rule::RowMatching, Rule::ColourShape, Rule::LeftOf];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Same => "same",
            Rule::Between => "between",
            Rule::Occurs => "occurs",
            Rule::Xoccurs => "xoccurs",
            Rule::RowMatching => "row_matching",
            Rule::ColourShape => "colour_shape",
            Rule::LeftOf => "left_of",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SameDiff,
    Rmts,
    Rmts3,
    SameDiff6,
    SeparatedInputs,
    /// Distribution-of-N; `Dist(3)` is Dist3.
    Dist(usize),
    IdentityRules,
    IdentityRules4,
    Game(Rule),
}

impl TaskKind {
    /// The four basic cognitive tasks.
    pub const COGNITIVE: [TaskKind; 4] =
        [TaskKind::SameDiff, TaskKind::Rmts, TaskKind::Dist(3), TaskKind::IdentityRules];

    pub fn is_game(self) -> bool {
        matches!(self, TaskKind::Game(_))
    }

    pub fn num_classes(self) -> usize {
        match self {
            TaskKind::SameDiff | TaskKind::Rmts | TaskKind::Rmts3 | TaskKind::SameDiff6 | TaskKind::SeparatedInputs => 2,
            TaskKind::Dist(n) => n + 1,
            TaskKind::IdentityRules => 4,
            TaskKind::IdentityRules4 => 6,
            TaskKind::Game(Rule::ColourShape) => 4,
            TaskKind::Game(_) => 2,
        }
    }

    /// Sequence length without the optional masked-slot placeholder.
    pub fn seq_len(self) -> usize {
        match self {
            TaskKind::SameDiff => 2,
            TaskKind::Rmts | TaskKind::SameDiff6 => 6,
            TaskKind::Rmts3 | TaskKind::IdentityRules | TaskKind::Game(_) => 9,
            TaskKind::SeparatedInputs => 4,
            TaskKind::Dist(n) => 3 * n,
            TaskKind::IdentityRules4 => 13,
        }
    }

    /// Minimum number of distinct training shapes an episode can need.
    pub fn k_min(self) -> usize {
        match self {
            TaskKind::SameDiff | TaskKind::SameDiff6 | TaskKind::SeparatedInputs => 2,
            TaskKind::Rmts | TaskKind::IdentityRules => 5,
            TaskKind::Rmts3 | TaskKind::IdentityRules4 => 6,
            TaskKind::Dist(n) => n + 1,
            TaskKind::Game(_) => 0,
        }
    }

    /// Minimum number of distinct held-out shapes a test episode can need.
    /// RMTS3 test rows mix ABC and AAB triplets, up to eight shapes.
    pub fn k_min_test(self) -> usize {
        match self {
            TaskKind::Rmts3 => 8,
            k => k.k_min(),
        }
    }

    /// Whether the task has a separate position for the masked answer slot.
    pub fn has_masked_slot(self) -> bool {
        matches!(self, TaskKind::Dist(_) | TaskKind::IdentityRules | TaskKind::IdentityRules4)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::SameDiff => f.write_str("same_diff"),
            TaskKind::Rmts => f.write_str("rmts"),
            TaskKind::Rmts3 => f.write_str("rmts3"),
            TaskKind::SameDiff6 => f.write_str("same_diff6"),
            TaskKind::SeparatedInputs => f.write_str("separated_inputs"),
            TaskKind::Dist(n) => write!(f, "dist{n}"),
            TaskKind::IdentityRules => f.write_str("identity_rules"),
            TaskKind::IdentityRules4 => f.write_str("identity_rules4"),
            TaskKind::Game(r) => write!(f, "rg_{}", r.name()),
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "same_diff" => TaskKind::SameDiff,
            "rmts" => TaskKind::Rmts,
            "rmts3" => TaskKind::Rmts3,
            "same_diff6" => TaskKind::SameDiff6,
            "separated_inputs" => TaskKind::SeparatedInputs,
            "identity_rules" => TaskKind::IdentityRules,
            "identity_rules4" => TaskKind::IdentityRules4,
            _ => {
                if let Some(rule) = s.strip_prefix("rg_") {
                    return Rule::ALL
                        .into_iter()
                        .find(|r| r.name() == rule)
                        .map(TaskKind::Game)
                        .ok_or_else(|| task_err(s, "unknown relational-games rule"));
                }
                match s.strip_prefix("dist").and_then(|n| n.parse::<usize>().ok()) {
                    Some(n) if n >= 2 => TaskKind::Dist(n),
                    _ => return Err(task_err(s, "unknown task")),
                }
            }
        };
        Ok(kind)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    Missing,
    Flipped,
    FlippedMissing,
    RestrictedPerms,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Missing => "missing",
            Variant::Flipped => "flipped",
            Variant::FlippedMissing => "flipped_missing",
            Variant::RestrictedPerms => "restricted_perms",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Variant::Full, Variant::Missing, Variant::Flipped, Variant::FlippedMissing, Variant::RestrictedPerms]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Which episode distribution to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSet {
    /// Held-out cognitive shapes; hexominoes for the grid games.
    Heldout,
    Hexomino,
    Stripe,
}

impl TestSet {
    pub fn name(self) -> &'static str {
        match self {
            TestSet::Heldout => "heldout",
            TestSet::Hexomino => "hexomino",
            TestSet::Stripe => "stripe",
        }
    }
}

impl FromStr for TestSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [TestSet::Heldout, TestSet::Hexomino, TestSet::Stripe]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown test set {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Train,
    Test(TestSet),
}

/// What one image of an episode depicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Item {
    /// Cognitive shape; `bg` indexes the spurious hue palette, `None` is black.
    Shape { glyph: usize, bg: Option<usize> },
    /// Plain colour image from the hue palette.
    Swatch { color: usize },
    /// Grid-game object. `orientation` is already reduced by the glyph's symmetry.
    Piece { family: Family, glyph: usize, color: usize, orientation: u8 },
    /// White placeholder for a masked answer slot.
    Mask,
    /// Empty grid cell.
    Empty,
}

impl Item {
    /// Identity for relational purposes: shape for cognitive objects,
    /// shape + colour + orientation for game pieces.
    pub fn same_object(&self, other: &Item) -> bool {
        match (self, other) {
            (Item::Shape { glyph: a, .. }, Item::Shape { glyph: b, .. }) => a == b,
            (a @ Item::Piece { .. }, b @ Item::Piece { .. }) => a == b,
            _ => false,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Item::Empty)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    /// Abstract pattern(s) used, e.g. `ABA` or `ABA|ABA`.
    pub pattern: String,
    /// One entry per image, in sequence order.
    pub items: Vec<Item>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub task: TaskKind,
    pub images: Vec<Image>,
    pub num_classes: usize,
    pub label: usize,
    pub meta: Meta,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Shape-identity ids of every cognitive object in the episode.
    pub fn glyph_ids(&self) -> Vec<usize> {
        self.meta
            .items
            .iter()
            .filter_map(|it| match it {
                Item::Shape { glyph, .. } => Some(*glyph),
                _ => None,
            })
            .collect()
    }

    /// Background palette indices of the spurious-colour objects.
    pub fn backgrounds(&self) -> Vec<usize> {
        self.meta
            .items
            .iter()
            .filter_map(|it| match it {
                Item::Shape { bg: Some(c), .. } => Some(*c),
                Item::Swatch { color } => Some(*color),
                _ => None,
            })
            .collect()
    }

    /// Side of the (square) images.
    pub fn image_size(&self) -> usize {
        self.images.first().map_or(0, |im| im.height)
    }

    /// Appends images as `[T, 3, H, W]` floats in [0, 1].
    pub fn write_chw<F: corelnet_autograd::Real>(&self, out: &mut Vec<F>) {
        for im in &self.images {
            im.write_chw(out);
        }
    }
}

/// Restricted-growth-string pattern of a sequence under `eq` (`ABA`, `AAB`, ...).
pub fn pattern_by<T>(xs: &[T], eq: impl Fn(&T, &T) -> bool) -> String {
    let mut reps: Vec<&T> = Vec::new();
    let mut out = String::with_capacity(xs.len());
    for x in xs {
        let idx = match reps.iter().position(|r| eq(r, x)) {
            Some(i) => i,
            None => {
                reps.push(x);
                reps.len() - 1
            }
        };
        out.push((b'A' + idx as u8) as char);
    }
    out
}

pub fn pattern_of<T: PartialEq>(xs: &[T]) -> String {
    pattern_by(xs, |a, b| a == b)
}

fn item_pattern(xs: &[Item]) -> String {
    pattern_by(xs, Item::same_object)
}

// ----- splits ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub m: usize,
    pub seed: u64,
    pub train: Vec<usize>,
    /// Empty when `m = 0`; evaluation then uses the training shapes.
    pub test: Vec<usize>,
}

impl Split {
    pub fn test_pool(&self) -> &[usize] {
        if self.test.is_empty() {
            &self.train
        } else {
            &self.test
        }
    }
}

fn check_holdout(task: TaskKind, m: usize, n: usize) -> Result<()> {
    let k_min = task.k_min();
    if m + k_min > n {
        return Err(Error::HoldoutTooLarge { task: task.to_string(), m, n, k_min });
    }
    if m > 0 && m < task.k_min_test() {
        let need = task.k_min_test();
        return Err(task_err(task, format!("holdout m = {m} is too small to build test episodes (needs {need})")));
    }
    Ok(())
}

/// Seeded shuffle of shape ids; the first `m` are held out for testing.
pub fn split_glyphs(set: &GlyphSet, m: usize, seed: u64, task: TaskKind) -> Result<Split> {
    let n = set.len();
    check_holdout(task, m, n)?;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 0x5711)));
    let test = ids[..m].to_vec();
    let train = ids[m..].to_vec();
    Ok(Split { m, seed, train, test })
}

// ----- pattern sets ----------------------------------------------------------

const TRIPLETS_TRAIN: [&str; 3] = ["AAA", "ABA", "ABB"];
const RMTS3_TEST: [&str; 2] = ["ABC", "AAB"];
const IR3: [&str; 3] = ["AAA", "ABA", "ABB"];
const IR4_TWO: [&str; 7] = ["AAAA", "AABA", "AABB", "ABAA", "ABAB", "ABBA", "ABBB"];
const IR4_THREE: [&str; 3] = ["ABCA", "ABCB", "ABCC"];
const ROW_PATTERNS: [&str; 5] = ["AAA", "AAB", "ABA", "ABB", "ABC"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub variant: Variant,
    pub spurious: bool,
    /// Side of a cognitive image (32 at full scale).
    pub image_size: usize,
    pub m: usize,
    pub split_seed: u64,
    pub glyph_seed: u64,
    /// Render a white placeholder for the masked answer slot.
    pub masked_slot: bool,
}

impl TaskConfig {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            variant: Variant::Full,
            spurious: kind == TaskKind::SeparatedInputs,
            image_size: 32,
            m: 0,
            split_seed: 0,
            glyph_seed: 0,
            masked_slot: false,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.kind.seq_len() + usize::from(self.masked_slot && self.kind.has_masked_slot())
    }

    pub fn num_classes(&self) -> usize {
        self.kind.num_classes()
    }

    /// Side of each sequence image.
    pub fn cell_size(&self) -> usize {
        if self.kind.is_game() {
            CELL
        } else {
            self.image_size
        }
    }

    /// Patterns admissible in training episodes, when the task restricts them.
    pub fn train_patterns(&self) -> Option<Vec<&'static str>> {
        match (self.kind, self.variant) {
            (TaskKind::Rmts3 | TaskKind::SameDiff6, _) => Some(TRIPLETS_TRAIN.to_vec()),
            (TaskKind::IdentityRules4, Variant::Full) => Some(IR4_TWO.to_vec()),
            (TaskKind::IdentityRules4, Variant::Missing) => {
                Some(IR4_TWO.iter().copied().filter(|p| *p != "ABAA" && *p != "ABAB").collect())
            }
            (TaskKind::IdentityRules4, Variant::Flipped) => Some(IR4_THREE.to_vec()),
            (TaskKind::IdentityRules4, Variant::FlippedMissing) => Some(vec!["ABCB", "ABCC"]),
            _ => None,
        }
    }

    /// Patterns used in test episodes, when different from training.
    pub fn test_patterns(&self) -> Option<Vec<&'static str>> {
        match (self.kind, self.variant) {
            (TaskKind::Rmts3, _) => Some(RMTS3_TEST.to_vec()),
            (TaskKind::SameDiff6, _) => Some(vec!["AAB"]),
            (TaskKind::IdentityRules4, Variant::Full | Variant::Missing) => Some(IR4_THREE.to_vec()),
            (TaskKind::IdentityRules4, Variant::Flipped | Variant::FlippedMissing) => Some(IR4_TWO.to_vec()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.variant {
            Variant::Full => true,
            Variant::Missing | Variant::Flipped | Variant::FlippedMissing => self.kind == TaskKind::IdentityRules4,
            Variant::RestrictedPerms => matches!(self.kind, TaskKind::Dist(n) if n > 3),
        };
        if !ok {
            return Err(task_err(self.kind, format!("variant {} leaves no admissible training/test split", self.variant.name())));
        }
        if let TaskKind::Dist(n) = self.kind {
            if n < 2 {
                return Err(task_err(self.kind, "distribution-of-N needs N ≥ 2"));
            }
        }
        if !self.kind.is_game() && (self.image_size == 0 || !self.image_size.is_multiple_of(crate::glyphs::BLOB_RES)) {
            return Err(task_err(self.kind, format!("image size {} is not a multiple of 16", self.image_size)));
        }
        if self.kind == TaskKind::SeparatedInputs && !self.spurious {
            return Err(task_err(self.kind, "separated inputs always carry colours"));
        }
        if !self.kind.is_game() {
            check_holdout(self.kind, self.m, N_SHAPES)?;
        }
        Ok(())
    }
}

// ----- generator -------------------------------------------------------------

/// splitmix64 finaliser over a pair of words.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn phase_code(phase: Phase) -> u64 {
    match phase {
        Phase::Train => 1,
        Phase::Test(TestSet::Heldout) => 2,
        Phase::Test(TestSet::Hexomino) => 3,
        Phase::Test(TestSet::Stripe) => 4,
    }
}

/// Builds episodes for one task configuration.
#[derive(Clone, Debug)]
pub struct Generator {
    cfg: TaskConfig,
    shapes: Option<GlyphSet>,
    split: Option<Split>,
    games: Vec<GlyphSet>,
    hues: Vec<Rgb>,
}

impl Generator {
    pub fn new(cfg: TaskConfig) -> Result<Self> {
        cfg.validate()?;
        let (shapes, split, games) = if cfg.kind.is_game() {
            let games = [Family::Pentomino, Family::Hexomino, Family::Stripe]
                .into_iter()
                .map(|f| generate_glyph_set(f, None, cfg.glyph_seed))
                .collect::<Result<Vec<_>>>()?;
            (None, None, games)
        } else {
            let set = generate_glyph_set(Family::Cognitive, Some(N_SHAPES), cfg.glyph_seed)?;
            let split = split_glyphs(&set, cfg.m, cfg.split_seed, cfg.kind)?;
            (Some(set), Some(split), Vec::new())
        };
        Ok(Self { cfg, shapes, split, games, hues: hue_palette(SPURIOUS_COLORS) })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.cfg
    }

    pub fn split(&self) -> Option<&Split> {
        self.split.as_ref()
    }

    fn game_set(&self, family: Family) -> &GlyphSet {
        let i = match family {
            Family::Pentomino => 0,
            Family::Hexomino => 1,
            _ => 2,
        };
        &self.games[i]
    }

    /// Label for `index`, balanced within each block of `num_classes` indices.
    pub fn label_for(&self, phase: Phase, seed: u64, index: u64) -> usize {
        let k = self.cfg.num_classes() as u64;
        let block = index / k;
        let mut perm: Vec<usize> = (0..k as usize).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(mix(seed, phase_code(phase)), block ^ 0xB10C_0000_0000)));
        perm[(index % k) as usize]
    }

    pub fn episode(&self, phase: Phase, seed: u64, index: u64) -> Result<Episode> {
        let label = self.label_for(phase, seed, index);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(seed, phase_code(phase)), index));
        let (mut items, pattern) = match self.cfg.kind {
            TaskKind::Game(rule) => self.game_items(rule, phase, label, &mut rng)?,
            _ => self.cognitive_items(phase, label, &mut rng)?,
        };
        if self.cfg.spurious {
            for it in &mut items {
                if let Item::Shape { bg, .. } = it {
                    *bg = Some(rng.gen_range(0..SPURIOUS_COLORS));
                }
            }
        }
        if self.cfg.masked_slot && self.cfg.kind.has_masked_slot() {
            let at = self.masked_position();
            items.insert(at, Item::Mask);
        }
        let images = items.iter().map(|it| self.render_item(it)).collect::<Result<Vec<_>>>()?;
        Ok(Episode { task: self.cfg.kind, images, num_classes: self.cfg.num_classes(), label, meta: Meta { pattern, items } })
    }

    /// Episodes `start..start + count`.
    pub fn batch(&self, phase: Phase, seed: u64, start: u64, count: usize) -> Result<Vec<Episode>> {
        (start..start + count as u64).map(|i| self.episode(phase, seed, i)).collect()
    }

    /// Position of the placeholder: right after the visible part of row 2.
    fn masked_position(&self) -> usize {
        match self.cfg.kind {
            TaskKind::Dist(n) => 2 * n - 1,
            TaskKind::IdentityRules => 5,
            TaskKind::IdentityRules4 => 7,
            _ => unreachable!("task without a masked slot"),
        }
    }

    pub fn render_item(&self, item: &Item) -> Result<Image> {
        let size = self.cfg.cell_size();
        Ok(match *item {
            Item::Shape { glyph, bg } => {
                let set = self.shapes.as_ref().ok_or_else(|| task_err(self.cfg.kind, "shape item in a grid game"))?;
                let g = set.glyphs.get(glyph).ok_or_else(|| Error::Oracle(format!("unknown glyph id {glyph}")))?;
                let bg = bg.map_or(Rgb::BLACK, |c| self.hues[c]);
                render_object(g, &RenderSpec::full(size, Rgb::WHITE, bg))?
            }
            Item::Swatch { color } => render_swatch(size, self.hues[color]),
            Item::Piece { family, glyph, color, orientation } => {
                let g = self
                    .game_set(family)
                    .glyphs
                    .get(glyph)
                    .ok_or_else(|| Error::Oracle(format!("unknown {} id {glyph}", family.name())))?;
                let spec = RenderSpec { orientation, ..RenderSpec::full(size, GAME_PALETTE[color], Rgb::BLACK) };
                render_object(g, &spec)?
            }
            Item::Mask => Image::filled(size, size, Rgb::WHITE),
            Item::Empty => Image::filled(size, size, Rgb::BLACK),
        })
    }

    /// Re-renders every item and compares against the stored images.
    pub fn verify_images(&self, ep: &Episode) -> Result<()> {
        if ep.images.len() != ep.meta.items.len() {
            return Err(Error::Oracle(format!("{} images but {} metadata items", ep.images.len(), ep.meta.items.len())));
        }
        for (t, (img, item)) in ep.images.iter().zip(&ep.meta.items).enumerate() {
            if self.render_item(item)? != *img {
                return Err(Error::Oracle(format!("image {t} does not match its metadata {item:?}")));
            }
        }
        Ok(())
    }

    fn pool(&self, phase: Phase) -> &[usize] {
        let split = self.split.as_ref().expect("cognitive task has a split");
        match phase {
            Phase::Train => &split.train,
            Phase::Test(_) => split.test_pool(),
        }
    }

    fn patterns(&self, phase: Phase) -> Option<Vec<&'static str>> {
        match phase {
            Phase::Train => self.cfg.train_patterns(),
            Phase::Test(_) => self.cfg.test_patterns().or_else(|| self.cfg.train_patterns()),
        }
    }

    fn cognitive_items(&self, phase: Phase, label: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<Item>, String)> {
        let pool = self.pool(phase);
        let kind = self.cfg.kind;
        let shape = |g: usize| Item::Shape { glyph: g, bg: None };
        let draw = |rng: &mut ChaCha8Rng, k: usize| -> Result<Vec<usize>> {
            if pool.len() < k {
                return Err(task_err(kind, format!("needs {k} distinct shapes, pool has {}", pool.len())));
            }
            Ok(sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
        };
        match kind {
            TaskKind::SameDiff => {
                let o = draw(rng, 2)?;
                let pair = if label == 1 { [o[0], o[0]] } else { [o[0], o[1]] };
                Ok((pair.iter().map(|&g| shape(g)).collect(), pattern_of(&pair)))
            }
            TaskKind::SeparatedInputs => {
                let o = draw(rng, 2)?;
                let second = if label == 1 { o[0] } else { o[1] };
                let c1 = rng.gen_range(0..SPURIOUS_COLORS);
                let c2 = rng.gen_range(0..SPURIOUS_COLORS);
                let items = vec![shape(o[0]), Item::Swatch { color: c1 }, shape(second), Item::Swatch { color: c2 }];
                Ok((items, pattern_of(&[o[0], second])))
            }
            TaskKind::Rmts => {
                let o = draw(rng, 5)?;
                let same_src = rng.gen_bool(0.5);
                let (same_pair, diff_pair) = ([o[2], o[2]], [o[3], o[4]]);
                let src = if same_src { [o[0], o[0]] } else { [o[0], o[1]] };
                let (hit, miss) = if same_src { (same_pair, diff_pair) } else { (diff_pair, same_pair) };
                let targets = if label == 0 { [hit, miss] } else { [miss, hit] };
                let seq: Vec<usize> = src.iter().chain(targets.iter().flatten()).copied().collect();
                let pat = [pattern_of(&src), pattern_of(&targets[0]), pattern_of(&targets[1])].join("|");
                Ok((seq.into_iter().map(shape).collect(), pat))
            }
            TaskKind::Rmts3 => {
                let pats = self.patterns(phase).expect("rmts3 patterns");
                let src = *pats.choose(rng).expect("patterns");
                let other = *pats.iter().filter(|&&p| p != src).collect::<Vec<_>>().choose(rng).expect("two patterns");
                let order = if label == 0 { [src, src, other] } else { [src, other, src] };
                let need: usize = order.iter().map(|p| distinct_letters(p)).sum();
                let objs = draw(rng, need)?;
                let mut next = objs.into_iter();
                let mut seq = Vec::with_capacity(9);
                for p in order {
                    seq.extend(fill_pattern(p, &mut next));
                }
                Ok((seq.into_iter().map(shape).collect(), order.join("|")))
            }
            TaskKind::SameDiff6 => {
                let (p1, p2) = match phase {
                    Phase::Train => {
                        let a = *TRIPLETS_TRAIN.choose(rng).expect("patterns");
                        let b = if label == 1 {
                            a
                        } else {
                            *TRIPLETS_TRAIN.iter().filter(|&&p| p != a).collect::<Vec<_>>().choose(rng).expect("two")
                        };
                        (a, b)
                    }
                    Phase::Test(_) => {
                        if label == 1 {
                            ("AAB", "AAB")
                        } else {
                            let other = *TRIPLETS_TRAIN.choose(rng).expect("patterns");
                            if rng.gen_bool(0.5) {
                                ("AAB", other)
                            } else {
                                (other, "AAB")
                            }
                        }
                    }
                };
                let mut seq = Vec::with_capacity(6);
                for p in [p1, p2] {
                    let objs = draw(rng, distinct_letters(p))?;
                    seq.extend(fill_pattern(p, &mut objs.into_iter()));
                }
                Ok((seq.into_iter().map(shape).collect(), format!("{p1}|{p2}")))
            }
            TaskKind::Dist(n) => {
                let o = draw(rng, n + 1)?;
                let (row1, distractor) = (&o[..n], o[n]);
                let perm = self.dist_permutation(n, phase, rng);
                let row2: Vec<usize> = perm.iter().map(|&j| row1[j]).collect();
                let answer = row2[n - 1];
                let mut others: Vec<usize> = row1.iter().copied().filter(|&g| g != answer).collect();
                others.push(distractor);
                others.shuffle(rng);
                others.insert(label, answer);
                let seq: Vec<usize> = row1.iter().chain(&row2[..n - 1]).chain(&others).copied().collect();
                let pat = perm.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("");
                Ok((seq.into_iter().map(shape).collect(), pat))
            }
            TaskKind::IdentityRules | TaskKind::IdentityRules4 => {
                let (len, n_cand) = if kind == TaskKind::IdentityRules { (3, 4) } else { (4, 6) };
                let pats = self.patterns(phase).unwrap_or_else(|| IR3.to_vec());
                let p = *pats.choose(rng).expect("patterns");
                let d = distinct_letters(p);
                let objs = draw(rng, 2 * d)?;
                let row1 = fill_pattern(p, &mut objs[..d].iter().copied());
                let row2 = fill_pattern(p, &mut objs[d..].iter().copied());
                let answer = row2[len - 1];
                let rest: Vec<usize> = pool.iter().copied().filter(|&g| g != answer).collect();
                if rest.len() < n_cand - 1 {
                    return Err(task_err(kind, "pool too small for distinct candidates"));
                }
                let mut cands: Vec<usize> = sample(rng, rest.len(), n_cand - 1).into_iter().map(|i| rest[i]).collect();
                cands.insert(label, answer);
                let seq: Vec<usize> = row1.iter().chain(&row2[..len - 1]).chain(&cands).copied().collect();
                Ok((seq.into_iter().map(shape).collect(), p.to_string()))
            }
            TaskKind::Game(_) => unreachable!(),
        }
    }

    /// Permutation `π` with `row2[j] = row1[π[j]]`.
    fn dist_permutation(&self, n: usize, phase: Phase, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let keep = n.saturating_sub(3);
        if self.cfg.variant != Variant::RestrictedPerms {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            return p;
        }
        match phase {
            Phase::Train => {
                let mut head: Vec<usize> = (0..keep).collect();
                let mut tail: Vec<usize> = (keep..n).collect();
                head.shuffle(rng);
                tail.shuffle(rng);
                head.extend(tail);
                head
            }
            Phase::Test(_) => loop {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(rng);
                if !preserves_prefix(&p, keep) {
                    return p;
                }
            },
        }
    }

    fn game_family(&self, phase: Phase) -> Family {
        match phase {
            Phase::Train => Family::Pentomino,
            Phase::Test(TestSet::Stripe) => Family::Stripe,
            Phase::Test(_) => Family::Hexomino,
        }
    }

    fn random_piece(&self, family: Family, rng: &mut ChaCha8Rng) -> Item {
        let set = self.game_set(family);
        let glyph = rng.gen_range(0..set.len());
        let orientation = set.glyphs[glyph].reduced_orientation(rng.gen_range(0..4));
        Item::Piece { family, glyph, color: rng.gen_range(0..GAME_PALETTE.len()), orientation }
    }

    fn piece_avoiding(&self, family: Family, avoid: &[Item], rng: &mut ChaCha8Rng) -> Item {
        loop {
            let p = self.random_piece(family, rng);
            if !avoid.iter().any(|a| a.same_object(&p)) {
                return p;
            }
        }
    }

    fn distinct_pieces(&self, family: Family, k: usize, rng: &mut ChaCha8Rng) -> Vec<Item> {
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let p = self.piece_avoiding(family, &out, rng);
            out.push(p);
        }
        out
    }

    fn game_items(&self, rule: Rule, phase: Phase, label: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<Item>, String)> {
        let fam = self.game_family(phase);
        let mut grid = [Item::Empty; 9];
        let pattern: String;
        let place = |grid: &mut [Item; 9], cells: &[usize], pieces: &[Item]| {
            for (&c, &p) in cells.iter().zip(pieces) {
                grid[c] = p;
            }
        };
        let random_cells = |rng: &mut ChaCha8Rng, k: usize| -> Vec<usize> { sample(rng, 9, k).into_vec() };
        match rule {
            Rule::Same => {
                let d = self.distinct_pieces(fam, 3, rng);
                let mut objs = if label == 1 { vec![d[0], d[0], d[1]] } else { d };
                objs.shuffle(rng);
                place(&mut grid, &random_cells(rng, 3), &objs);
                pattern = item_pattern(&objs);
            }
            Rule::Between => {
                let d = self.distinct_pieces(fam, 3, rng);
                let line = *LINES.choose(rng).expect("lines");
                if label == 1 {
                    place(&mut grid, &line, &[d[0], d[1], d[0]]);
                    pattern = "line ABA".into();
                } else if rng.gen_bool(0.5) {
                    place(&mut grid, &line, &[d[0], d[1], d[2]]);
                    pattern = "line ABC".into();
                } else {
                    let cells = loop {
                        let c = random_cells(rng, 3);
                        if line_of(&c).is_none() {
                            break c;
                        }
                    };
                    let mut objs = vec![d[0], d[0], d[1]];
                    objs.shuffle(rng);
                    place(&mut grid, &cells, &objs);
                    pattern = "scattered".into();
                }
            }
            Rule::Occurs | Rule::Xoccurs => {
                let top = self.random_piece(fam, rng);
                let mut bottom: Vec<Item> = match (rule, label) {
                    (Rule::Occurs, 1) => {
                        let mut b = vec![top];
                        for _ in 0..2 {
                            b.push(self.piece_avoiding(fam, &[top], rng));
                        }
                        b
                    }
                    (_, 0) if rule == Rule::Occurs || rng.gen_range(0..3) == 0 => {
                        (0..3).map(|_| self.piece_avoiding(fam, &[top], rng)).collect()
                    }
                    (Rule::Xoccurs, 1) => {
                        let b = self.piece_avoiding(fam, &[top], rng);
                        let c = self.piece_avoiding(fam, &[top, b], rng);
                        vec![top, b, c]
                    }
                    _ => {
                        // xoccurs negatives: the top object twice, or once with a repeated pair.
                        let b = self.piece_avoiding(fam, &[top], rng);
                        if rng.gen_bool(0.5) {
                            vec![top, top, b]
                        } else {
                            vec![top, b, b]
                        }
                    }
                };
                bottom.shuffle(rng);
                grid[rng.gen_range(0..3)] = top;
                place(&mut grid, &[6, 7, 8], &bottom);
                let mut seq = vec![top];
                seq.extend(&bottom);
                pattern = item_pattern(&seq);
            }
            Rule::RowMatching => {
                let p1 = *ROW_PATTERNS.choose(rng).expect("patterns");
                let p2 = if label == 1 {
                    p1
                } else {
                    *ROW_PATTERNS.iter().filter(|&&p| p != p1).collect::<Vec<_>>().choose(rng).expect("patterns")
                };
                for (row, p) in [(0usize, p1), (2, p2)] {
                    let objs = self.distinct_pieces(fam, distinct_letters(p), rng);
                    let filled = fill_pattern(p, &mut objs.into_iter());
                    place(&mut grid, &[row * 3, row * 3 + 1, row * 3 + 2], &filled);
                }
                pattern = format!("{p1}|{p2}");
            }
            Rule::ColourShape => {
                let (colour_diff, shape_diff) = (label / 2 == 1, label % 2 == 1);
                let a = self.random_piece(fam, rng);
                let Item::Piece { glyph, color, .. } = a else { unreachable!() };
                let set = self.game_set(fam);
                let glyph_b = if shape_diff { pick_other(rng, set.len(), glyph) } else { glyph };
                let color_b = if colour_diff { pick_other(rng, GAME_PALETTE.len(), color) } else { color };
                let orientation = set.glyphs[glyph_b].reduced_orientation(rng.gen_range(0..4));
                let b = Item::Piece { family: fam, glyph: glyph_b, color: color_b, orientation };
                place(&mut grid, &random_cells(rng, 2), &[a, b]);
                pattern = format!("colour {} shape {}", same_word(!colour_diff), same_word(!shape_diff));
            }
            Rule::LeftOf => {
                let (left, right) = loop {
                    let c = random_cells(rng, 2);
                    if c[0] % 3 < c[1] % 3 {
                        break (c[0], c[1]);
                    }
                };
                let cols: Vec<usize> = sample(rng, GAME_PALETTE.len(), 2).into_vec();
                let (dark, light) = if GAME_PALETTE[cols[0]].luminance() < GAME_PALETTE[cols[1]].luminance() {
                    (cols[0], cols[1])
                } else {
                    (cols[1], cols[0])
                };
                let mut with_colour = |color: usize| {
                    let Item::Piece { family, glyph, orientation, .. } = self.random_piece(fam, rng) else { unreachable!() };
                    Item::Piece { family, glyph, color, orientation }
                };
                let (pd, pl) = (with_colour(dark), with_colour(light));
                if label == 1 {
                    place(&mut grid, &[left, right], &[pd, pl]);
                } else {
                    place(&mut grid, &[left, right], &[pl, pd]);
                }
                pattern = "pair".into();
            }
        }
        Ok((grid.to_vec(), pattern))
    }
}

fn same_word(same: bool) -> &'static str {
    if same {
        "same"
    } else {
        "different"
    }
}

fn pick_other(rng: &mut ChaCha8Rng, n: usize, not: usize) -> usize {
    let r = rng.gen_range(0..n - 1);
    if r >= not {
        r + 1
    } else {
        r
    }
}

/// All straight lines of three cells in a 3×3 grid, middle cell in the centre slot.
pub const LINES: [[usize; 3]; 8] =
    [[0, 1, 2], [3, 4, 5], [6, 7, 8], [0, 3, 6], [1, 4, 7], [2, 5, 8], [0, 4, 8], [2, 4, 6]];

/// The line through exactly these three cells, if any.
pub fn line_of(cells: &[usize]) -> Option<[usize; 3]> {
    let mut c = cells.to_vec();
    c.sort_unstable();
    LINES.iter().copied().find(|l| {
        let mut s = l.to_vec();
        s.sort_unstable();
        s == c
    })
}

fn preserves_prefix(perm: &[usize], keep: usize) -> bool {
    perm[..keep].iter().all(|&j| j < keep)
}

fn distinct_letters(p: &str) -> usize {
    let mut seen: Vec<char> = p.chars().collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Instantiates a letter pattern with successive objects from `objs`.
fn fill_pattern<T: Copy>(p: &str, objs: &mut impl Iterator<Item = T>) -> Vec<T> {
    let mut map: Vec<(char, T)> = Vec::new();
    p.chars()
        .map(|ch| match map.iter().find(|(c, _)| *c == ch) {
            Some(&(_, o)) => o,
            None => {
                let o = objs.next().expect("enough objects for pattern");
                map.push((ch, o));
                o
            }
        })
        .collect()
}

// ----- batch entry points ----------------------------------------------------

/// Pair-comparison tasks: same/different, RMTS, RMTS 3, same/diff 6, separated inputs.
pub fn gen_pair_task(cfg: &TaskConfig, phase: Phase, count: usize, seed: u64) -> Result<Vec<Episode>> {
    if !matches!(
        cfg.kind,
        TaskKind::SameDiff | TaskKind::Rmts | TaskKind::Rmts3 | TaskKind::SameDiff6 | TaskKind::SeparatedInputs
    ) {
        return Err(task_err(cfg.kind, "not a pair task"));
    }
    Generator::new(cfg.clone())?.batch(phase, seed, 0, count)
}

/// Row-completion tasks: Dist-N and identity rules.
pub fn gen_row_task(cfg: &TaskConfig, phase: Phase, count: usize, seed: u64) -> Result<Vec<Episode>> {
    if !matches!(cfg.kind, TaskKind::Dist(_) | TaskKind::IdentityRules | TaskKind::IdentityRules4) {
        return Err(task_err(cfg.kind, "not a row task"));
    }
    Generator::new(cfg.clone())?.batch(phase, seed, 0, count)
}

pub fn gen_relational_game(rule: Rule, phase: Phase, count: usize, seed: u64) -> Result<Vec<Episode>> {
    Generator::new(TaskConfig::new(TaskKind::Game(rule)))?.batch(phase, seed, 0, count)
}

// ----- oracle ----------------------------------------------------------------

/// Recomputes the label of an episode from its metadata by brute force.
/// Never reads `episode.label`.
pub fn oracle_label(ep: &Episode) -> Result<usize> {
    let items: Vec<Item> = ep.meta.items.iter().copied().filter(|it| *it != Item::Mask).collect();
    let bad = |msg: &str| Error::Oracle(format!("{}: {msg}", ep.task));
    if items.len() != ep.task.seq_len() {
        return Err(bad(&format!("expected {} objects, found {}", ep.task.seq_len(), items.len())));
    }
    let same = |a: usize, b: usize| items[a].same_object(&items[b]);
    let unique = |hits: Vec<usize>| -> Result<usize> {
        match hits.as_slice() {
            [one] => Ok(*one),
            _ => Err(bad(&format!("{} admissible answers", hits.len()))),
        }
    };
    match ep.task {
        TaskKind::SameDiff => Ok(usize::from(same(0, 1))),
        TaskKind::SeparatedInputs => Ok(usize::from(same(0, 2))),
        TaskKind::Rmts => {
            let src = same(0, 1);
            unique((0..2).filter(|&t| same(2 + 2 * t, 3 + 2 * t) == src).collect())
        }
        TaskKind::Rmts3 => {
            let src = item_pattern(&items[0..3]);
            unique((0..2).filter(|&t| item_pattern(&items[3 + 3 * t..6 + 3 * t]) == src).collect())
        }
        TaskKind::SameDiff6 => Ok(usize::from(item_pattern(&items[0..3]) == item_pattern(&items[3..6]))),
        TaskKind::Dist(n) => {
            let (row1, row2, cands) = (&items[..n], &items[n..2 * n - 1], &items[2 * n - 1..]);
            unique(
                (0..cands.len())
                    .filter(|&c| {
                        let mut done: Vec<Item> = row2.to_vec();
                        done.push(cands[c]);
                        is_permutation_of(&done, row1)
                    })
                    .collect(),
            )
        }
        TaskKind::IdentityRules | TaskKind::IdentityRules4 => {
            let len = if ep.task == TaskKind::IdentityRules { 3 } else { 4 };
            let target = item_pattern(&items[..len]);
            let (row2, cands) = (&items[len..2 * len - 1], &items[2 * len - 1..]);
            unique(
                (0..cands.len())
                    .filter(|&c| {
                        let mut done = row2.to_vec();
                        done.push(cands[c]);
                        item_pattern(&done) == target
                    })
                    .collect(),
            )
        }
        TaskKind::Game(rule) => game_oracle(rule, &items).map_err(|m| bad(&m)),
    }
}

fn is_permutation_of(a: &[Item], b: &[Item]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    a.iter().all(|x| {
        if let Some(j) = (0..b.len()).find(|&j| !used[j] && b[j].same_object(x)) {
            used[j] = true;
            true
        } else {
            false
        }
    })
}

fn game_oracle(rule: Rule, grid: &[Item]) -> std::result::Result<usize, String> {
    let occupied: Vec<usize> = (0..9).filter(|&i| !grid[i].is_empty()).collect();
    let expect = |n: usize| {
        if occupied.len() == n {
            Ok(())
        } else {
            Err(format!("{} objects where the rule uses {n}", occupied.len()))
        }
    };
    let same = |a: usize, b: usize| grid[a].same_object(&grid[b]);
    let yes = |b: bool| Ok(usize::from(b));
    match rule {
        Rule::Same => {
            expect(3)?;
            let o = &occupied;
            yes(same(o[0], o[1]) || same(o[0], o[2]) || same(o[1], o[2]))
        }
        Rule::Between => {
            expect(3)?;
            yes(line_of(&occupied).is_some_and(|l| same(l[0], l[2])))
        }
        Rule::Occurs | Rule::Xoccurs => {
            expect(4)?;
            let tops: Vec<usize> = occupied.iter().copied().filter(|&i| i < 3).collect();
            let bottom = [6, 7, 8];
            if tops.len() != 1 || !bottom.iter().all(|b| occupied.contains(b)) {
                return Err("expected one top-row object over a full bottom row".into());
            }
            let hits: Vec<usize> = bottom.iter().copied().filter(|&b| same(tops[0], b)).collect();
            if rule == Rule::Occurs {
                return yes(!hits.is_empty());
            }
            let rest: Vec<usize> = bottom.iter().copied().filter(|b| !hits.contains(b)).collect();
            yes(hits.len() == 1 && !same(rest[0], rest[1]))
        }
        Rule::RowMatching => {
            expect(6)?;
            if !(0..3).chain(6..9).all(|i| !grid[i].is_empty()) {
                return Err("row matching needs full top and bottom rows".into());
            }
            yes(item_pattern(&grid[0..3]) == item_pattern(&grid[6..9]))
        }
        Rule::ColourShape => {
            expect(2)?;
            let (a, b) = (grid[occupied[0]], grid[occupied[1]]);
            match (a, b) {
                (Item::Piece { glyph: g1, color: c1, .. }, Item::Piece { glyph: g2, color: c2, .. }) => {
                    Ok(2 * usize::from(c1 != c2) + usize::from(g1 != g2))
                }
                _ => Err("colour/shape objects must be pieces".into()),
            }
        }
        Rule::LeftOf => {
            expect(2)?;
            let lum = |i: usize| match grid[i] {
                Item::Piece { color, .. } => Ok(GAME_PALETTE[color].luminance()),
                _ => Err("left-of objects must be pieces".to_string()),
            };
            let (a, b) = (occupied[0], occupied[1]);
            let (la, lb) = (lum(a)?, lum(b)?);
            if la == lb {
                return Err("left-of objects share a luminance".into());
            }
            let dark = if la < lb { a } else { b };
            let light = if la < lb { b } else { a };
            yes(dark % 3 < light % 3)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(kind: TaskKind) -> Generator {
        Generator::new(TaskConfig { image_size: 16, ..TaskConfig::new(kind) }).unwrap()
    }

    fn shapes(ids: &[usize]) -> Vec<Item> {
        ids.iter().map(|&g| Item::Shape { glyph: g, bg: None }).collect()
    }

    fn ep(task: TaskKind, items: Vec<Item>) -> Episode {
        Episode {
            task,
            images: Vec::new(),
            num_classes: task.num_classes(),
            label: usize::MAX,
            meta: Meta { pattern: String::new(), items },
        }
    }

    #[test]
    fn patterns() {
        assert_eq!(pattern_of(&[7, 3, 7]), "ABA");
        assert_eq!(pattern_of(&[3, 7, 7]), "ABB");
        assert_eq!(pattern_of(&[1, 2, 3, 1]), "ABCA");
        assert_eq!(fill_pattern("ABBA", &mut [4, 9].into_iter()), vec![4, 9, 9, 4]);
    }

    #[test]
    fn task_names_round_trip() {
        let mut all = vec![
            TaskKind::SameDiff,
            TaskKind::Rmts,
            TaskKind::Rmts3,
            TaskKind::SameDiff6,
            TaskKind::SeparatedInputs,
            TaskKind::Dist(3),
            TaskKind::Dist(10),
            TaskKind::IdentityRules,
            TaskKind::IdentityRules4,
        ];
        all.extend(Rule::ALL.map(TaskKind::Game));
        for k in all {
            assert_eq!(k.to_string().parse::<TaskKind>().unwrap(), k);
        }
        assert!("rg_nonsense".parse::<TaskKind>().is_err());
        assert!("dist1".parse::<TaskKind>().is_err());
    }

    #[test]
    fn split_sizes_from_the_holdout_figure() {
        let set = generate_glyph_set(Family::Cognitive, Some(100), 0).unwrap();
        let s = split_glyphs(&set, 95, 1, TaskKind::SameDiff).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (5, 95));
        let s = split_glyphs(&set, 98, 1, TaskKind::SameDiff).unwrap();
        assert_eq!(s.train.len(), 2);
        let s = split_glyphs(&set, 0, 1, TaskKind::Rmts).unwrap();
        assert!(s.test.is_empty());
        assert_eq!(s.test_pool(), s.train.as_slice());
        match split_glyphs(&set, 96, 1, TaskKind::Rmts) {
            Err(Error::HoldoutTooLarge { k_min, .. }) => assert_eq!(k_min, 5),
            other => panic!("{other:?}"),
        }
        assert!(split_glyphs(&set, 90, 1, TaskKind::Dist(10)).is_err());
        assert!(split_glyphs(&set, 89, 1, TaskKind::Dist(10)).is_ok());
    }

    #[test]
    fn sequence_lengths() {
        for (k, t) in [
            (TaskKind::SameDiff, 2),
            (TaskKind::Rmts, 6),
            (TaskKind::Dist(3), 9),
            (TaskKind::IdentityRules, 9),
            (TaskKind::Rmts3, 9),
            (TaskKind::SameDiff6, 6),
            (TaskKind::IdentityRules4, 13),
            (TaskKind::Dist(10), 30),
            (TaskKind::SeparatedInputs, 4),
            (TaskKind::Game(Rule::Same), 9),
        ] {
            let e = gen(k).episode(Phase::Train, 0, 0).unwrap();
            assert_eq!(e.len(), t, "{k}");
        }
        assert_eq!(TaskKind::Dist(10).num_classes(), 11);
    }

    #[test]
    fn masked_slot_adds_a_white_image() {
        let cfg = TaskConfig { image_size: 16, masked_slot: true, ..TaskConfig::new(TaskKind::Dist(3)) };
        let g = Generator::new(cfg).unwrap();
        let e = g.episode(Phase::Train, 0, 3).unwrap();
        assert_eq!(e.len(), 10);
        assert_eq!(e.meta.items[5], Item::Mask);
        assert_eq!(oracle_label(&e).unwrap(), e.label);
    }

    #[test]
    fn same_diff_identical_glyph_is_same() {
        assert_eq!(oracle_label(&ep(TaskKind::SameDiff, shapes(&[4, 4]))).unwrap(), 1);
        assert_eq!(oracle_label(&ep(TaskKind::SameDiff, shapes(&[4, 5]))).unwrap(), 0);
    }

    #[test]
    fn rmts_second_pair() {
        // source AA, first target AB, second target CC
        let e = ep(TaskKind::Rmts, shapes(&[1, 1, 2, 3, 4, 4]));
        assert_eq!(oracle_label(&e).unwrap(), 1);
    }

    #[test]
    fn separated_inputs_ignore_colours() {
        let items = vec![
            Item::Shape { glyph: 8, bg: None },
            Item::Swatch { color: 3 },
            Item::Shape { glyph: 8, bg: None },
            Item::Swatch { color: 70 },
        ];
        assert_eq!(oracle_label(&ep(TaskKind::SeparatedInputs, items)).unwrap(), 1);
    }

    #[test]
    fn dist3_layout_answer() {
        // row 1: A B C; row 2: C A _; candidates: D A B C -> B at index 2
        let e = ep(TaskKind::Dist(3), shapes(&[10, 11, 12, 12, 10, 13, 10, 11, 12]));
        assert_eq!(oracle_label(&e).unwrap(), 2);
    }

    #[test]
    fn identity_rules_aba_answer() {
        // row 1: A B A; row 2: C D _; candidates: E D A C -> C at index 3
        let e = ep(TaskKind::IdentityRules, shapes(&[1, 2, 1, 3, 4, 5, 4, 1, 3]));
        assert_eq!(oracle_label(&e).unwrap(), 3);
    }

    #[test]
    fn rmts3_source_matches_first_target() {
        let e = ep(TaskKind::Rmts3, shapes(&[1, 2, 3, 4, 5, 6, 7, 7, 8]));
        assert_eq!(oracle_label(&e).unwrap(), 0);
    }

    #[test]
    fn identity_rules4_unique_completion() {
        // row 1 ABCA; row 2 D E F _; candidates include D once
        let e = ep(TaskKind::IdentityRules4, shapes(&[1, 2, 3, 1, 4, 5, 6, 7, 5, 9, 4, 1, 6]));
        assert_eq!(oracle_label(&e).unwrap(), 3);
        // ABAC cannot be completed uniquely: every novel candidate fits
        let e = ep(TaskKind::IdentityRules4, shapes(&[1, 2, 1, 3, 4, 5, 4, 7, 8, 9, 10, 11, 12]));
        assert!(oracle_label(&e).is_err());
    }

    #[test]
    fn between_and_row_matching() {
        let p = |g: usize| Item::Piece { family: Family::Pentomino, glyph: g, color: 0, orientation: 0 };
        let mut grid = vec![Item::Empty; 9];
        grid[0] = p(1);
        grid[4] = p(2);
        grid[8] = p(1);
        assert_eq!(oracle_label(&ep(TaskKind::Game(Rule::Between), grid.clone())).unwrap(), 1);
        grid.swap(8, 7);
        assert_eq!(oracle_label(&ep(TaskKind::Game(Rule::Between), grid)).unwrap(), 0);
        let mut grid = vec![Item::Empty; 9];
        for (i, g) in [(0, 1), (1, 2), (2, 1), (6, 5), (7, 6), (8, 5)] {
            grid[i] = p(g);
        }
        assert_eq!(oracle_label(&ep(TaskKind::Game(Rule::RowMatching), grid)).unwrap(), 1);
    }

    #[test]
    fn left_of_swap_flips_label() {
        let g = gen(TaskKind::Game(Rule::LeftOf));
        for i in 0..50 {
            let e = g.episode(Phase::Train, 5, i).unwrap();
            let occ: Vec<usize> = (0..9).filter(|&c| !e.meta.items[c].is_empty()).collect();
            assert_eq!(occ.len(), 2);
            let mut swapped = e.clone();
            swapped.meta.items.swap(occ[0], occ[1]);
            assert_eq!(oracle_label(&swapped).unwrap(), 1 - e.label);
        }
    }

    #[test]
    fn deterministic_in_seed_and_index() {
        let g = gen(TaskKind::Rmts);
        assert_eq!(g.episode(Phase::Train, 3, 17).unwrap(), g.episode(Phase::Train, 3, 17).unwrap());
        assert_ne!(g.episode(Phase::Train, 3, 17).unwrap().meta, g.episode(Phase::Train, 4, 17).unwrap().meta);
    }

    #[test]
    fn invalid_variants_rejected() {
        let cfg = TaskConfig { variant: Variant::Missing, ..TaskConfig::new(TaskKind::Rmts) };
        assert!(Generator::new(cfg).is_err());
        let cfg = TaskConfig { variant: Variant::RestrictedPerms, ..TaskConfig::new(TaskKind::Dist(3)) };
        assert!(Generator::new(cfg).is_err());
    }

    #[test]
    fn images_match_metadata() {
        for k in [TaskKind::SameDiff, TaskKind::Dist(3), TaskKind::Game(Rule::Occurs)] {
            let g = gen(k);
            let mut e = g.episode(Phase::Test(TestSet::Heldout), 1, 2).unwrap();
            g.verify_images(&e).unwrap();
            let last = e.images.len() - 1;
            e.images[last].data[0] ^= 0xFF;
            assert!(g.verify_images(&e).is_err());
        }
    }
}
