use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use corelnet::glyphs::{enumerate_polyominoes, generate_glyph_set, symmetry_images, Family};
use corelnet::tasks::{
    oracle_label, Generator, Item, Phase, Rule, TaskConfig, TaskKind, TestSet, Variant, N_SHAPES,
};
use proptest::prelude::*;

// ----- polyominoes -----------------------------------------------------------

/// Fixed polyomino counts by Redelmeier's algorithm.
fn redelmeier(n: usize) -> usize {
    fn rec(
        n: usize,
        poly: &mut Vec<(i32, i32)>,
        untried: &mut Vec<(i32, i32)>,
        seen: &mut HashSet<(i32, i32)>,
        count: &mut usize,
    ) {
        while let Some(cell) = untried.pop() {
            poly.push(cell);
            *count += 1;
            if poly.len() < n {
                let mut added = Vec::new();
                let mut next = untried.clone();
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let nb = (cell.0 + dx, cell.1 + dy);
                    let allowed = nb.1 > 0 || (nb.1 == 0 && nb.0 >= 0);
                    if allowed && !seen.contains(&nb) {
                        seen.insert(nb);
                        added.push(nb);
                        next.push(nb);
                    }
                }
                rec(n, poly, &mut next, seen, count);
                for nb in added {
                    seen.remove(&nb);
                }
            }
            poly.pop();
        }
    }
    let mut counts = vec![0usize; n + 1];
    for k in 1..=n {
        let mut seen = HashSet::from([(0, 0)]);
        let mut count = 0;
        rec(k, &mut Vec::new(), &mut vec![(0, 0)], &mut seen, &mut count);
        counts[k] = count;
    }
    // `count` tallies every polyomino of size ≤ k; take differences.
    counts[n] - counts[n - 1]
}

fn connected(cells: &[(i32, i32)]) -> bool {
    let set: BTreeSet<_> = cells.iter().copied().collect();
    let mut seen = BTreeSet::from([cells[0]]);
    let mut q = VecDeque::from([cells[0]]);
    while let Some((r, c)) = q.pop_front() {
        for nb in [(r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)] {
            if set.contains(&nb) && seen.insert(nb) {
                q.push_back(nb);
            }
        }
    }
    seen.len() == set.len()
}

#[test]
fn redelmeier_reproduces_known_fixed_counts() {
    let fixed: Vec<usize> = (1..=6).map(redelmeier).collect();
    assert_eq!(fixed, [1, 2, 6, 19, 63, 216]);
}

#[test]
fn free_polyomino_orbits_cover_every_fixed_polyomino() {
    for k in 1..=6 {
        let free = enumerate_polyominoes(k);
        let mut fixed = BTreeSet::new();
        for p in &free {
            assert_eq!(p.len(), k);
            assert!(connected(p), "{p:?} is not connected");
            fixed.extend(symmetry_images(p));
        }
        assert_eq!(fixed.len(), redelmeier(k), "k = {k}");
        let reps: BTreeSet<_> = free.iter().collect();
        assert_eq!(reps.len(), free.len(), "duplicate free polyomino for k = {k}");
    }
    assert_eq!(enumerate_polyominoes(5).len(), 12);
    assert_eq!(enumerate_polyominoes(6).len(), 35);
}

#[test]
fn game_families_have_distinct_connected_masks() {
    for fam in [Family::Pentomino, Family::Hexomino, Family::Stripe] {
        let set = generate_glyph_set(fam, None, 0).unwrap();
        for (i, a) in set.glyphs.iter().enumerate() {
            for b in &set.glyphs[i + 1..] {
                assert_ne!(a.mask, b.mask, "{} has a duplicate glyph", fam.name());
            }
        }
        if fam != Family::Stripe {
            assert!(set.glyphs.iter().all(|g| g.mask.is_connected()));
        }
    }
}

// ----- helpers ---------------------------------------------------------------

/// Restricted-growth pattern written independently of the library.
fn rgs(xs: &[usize]) -> String {
    let mut firsts: Vec<usize> = Vec::new();
    xs.iter()
        .map(|x| {
            let i = firsts.iter().position(|f| f == x).unwrap_or_else(|| {
                firsts.push(*x);
                firsts.len() - 1
            });
            (b'A' + i as u8) as char
        })
        .collect()
}

fn cfg(kind: TaskKind, m: usize) -> TaskConfig {
    TaskConfig { image_size: 16, m, ..TaskConfig::new(kind) }
}

fn cognitive_kinds() -> Vec<TaskKind> {
    vec![
        TaskKind::SameDiff,
        TaskKind::Rmts,
        TaskKind::Rmts3,
        TaskKind::SameDiff6,
        TaskKind::SeparatedInputs,
        TaskKind::Dist(3),
        TaskKind::Dist(5),
        TaskKind::IdentityRules,
        TaskKind::IdentityRules4,
    ]
}

fn any_kind() -> impl Strategy<Value = TaskKind> {
    let mut all = cognitive_kinds();
    all.extend(Rule::ALL.into_iter().map(TaskKind::Game));
    proptest::sample::select(all)
}

fn phases(kind: TaskKind) -> Vec<Phase> {
    if kind.is_game() {
        vec![Phase::Train, Phase::Test(TestSet::Hexomino), Phase::Test(TestSet::Stripe)]
    } else {
        vec![Phase::Train, Phase::Test(TestSet::Heldout)]
    }
}

// ----- properties ------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oracle_relabels_every_episode(kind in any_kind(), seed in 0u64..1000, index in 0u64..10_000, m in 0usize..=90) {
        let m = if kind.is_game() { 0 } else { m.min(N_SHAPES - kind.k_min()).max(kind.k_min_test()) };
        let gen = Generator::new(cfg(kind, m)).unwrap();
        for phase in phases(kind) {
            let ep = gen.episode(phase, seed, index).unwrap();
            prop_assert_eq!(oracle_label(&ep).unwrap(), ep.label);
            prop_assert_eq!(ep.len(), gen.config().seq_len());
            gen.verify_images(&ep).unwrap();
        }
    }

    #[test]
    fn episodes_are_pure_functions_of_their_coordinates(kind in any_kind(), seed in 0u64..1000, index in 0u64..10_000) {
        let a = Generator::new(cfg(kind, 0)).unwrap();
        let b = Generator::new(cfg(kind, 0)).unwrap();
        prop_assert_eq!(a.episode(Phase::Train, seed, index).unwrap(), b.episode(Phase::Train, seed, index).unwrap());
    }

    #[test]
    fn labels_are_balanced_in_every_block(kind in any_kind(), seed in 0u64..1000, block in 0u64..100_000) {
        let gen = Generator::new(cfg(kind, 0)).unwrap();
        let k = gen.config().num_classes() as u64;
        let mut labels: Vec<usize> = (block * k..(block + 1) * k).map(|i| gen.label_for(Phase::Train, seed, i)).collect();
        labels.sort_unstable();
        prop_assert_eq!(labels, (0..k as usize).collect::<Vec<_>>());
    }

    #[test]
    fn holdout_split_partitions_the_shapes(kind in proptest::sample::select(cognitive_kinds()), m in 0usize..=95, split_seed in 0u64..1000) {
        let m = m.min(N_SHAPES - kind.k_min());
        let m = if m > 0 { m.max(kind.k_min_test()) } else { 0 };
        let c = TaskConfig { split_seed, ..cfg(kind, m) };
        let gen = Generator::new(c).unwrap();
        let split = gen.split().unwrap();
        prop_assert_eq!(split.test.len(), m);
        let train: BTreeSet<usize> = split.train.iter().copied().collect();
        let test: BTreeSet<usize> = split.test.iter().copied().collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.union(&test).count(), N_SHAPES);
        for i in 0..20 {
            let tr = gen.episode(Phase::Train, 7, i).unwrap();
            prop_assert!(tr.glyph_ids().iter().all(|g| train.contains(g)));
            if m > 0 {
                let te = gen.episode(Phase::Test(TestSet::Heldout), 7, i).unwrap();
                prop_assert!(te.glyph_ids().iter().all(|g| test.contains(g)));
            }
        }
    }
}

#[test]
fn game_test_sets_never_show_training_shapes() {
    for rule in Rule::ALL {
        let gen = Generator::new(cfg(TaskKind::Game(rule), 0)).unwrap();
        for (phase, family) in [
            (Phase::Train, Family::Pentomino),
            (Phase::Test(TestSet::Hexomino), Family::Hexomino),
            (Phase::Test(TestSet::Stripe), Family::Stripe),
        ] {
            for i in 0..200 {
                let ep = gen.episode(phase, 3, i).unwrap();
                for it in &ep.meta.items {
                    if let Item::Piece { family: f, .. } = it {
                        assert_eq!(*f, family, "{rule:?} {phase:?}");
                    }
                }
            }
        }
    }
}

#[test]
fn rmts3_tests_only_unseen_triplet_relations() {
    let gen = Generator::new(cfg(TaskKind::Rmts3, 0)).unwrap();
    let patterns = |phase| {
        let mut seen = BTreeSet::new();
        for i in 0..600 {
            let ids = gen.episode(phase, 11, i).unwrap().glyph_ids();
            for triplet in ids.chunks(3) {
                seen.insert(rgs(triplet));
            }
        }
        seen
    };
    let train = patterns(Phase::Train);
    let test = patterns(Phase::Test(TestSet::Heldout));
    assert_eq!(train, BTreeSet::from(["AAA".into(), "ABA".into(), "ABB".into()]));
    assert_eq!(test, BTreeSet::from(["AAB".into(), "ABC".into()]));
}

#[test]
fn identity_rules4_variants_hold_out_the_right_rows() {
    let rows = |variant, phase| {
        let gen = Generator::new(TaskConfig { variant, ..cfg(TaskKind::IdentityRules4, 0) }).unwrap();
        (0..800).map(|i| rgs(&gen.episode(phase, 5, i).unwrap().glyph_ids()[..4])).collect::<BTreeSet<String>>()
    };
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let two = set(&["AAAA", "AABA", "AABB", "ABAA", "ABAB", "ABBA", "ABBB"]);
    let three = set(&["ABCA", "ABCB", "ABCC"]);
    let heldout = Phase::Test(TestSet::Heldout);
    assert_eq!(rows(Variant::Full, Phase::Train), two);
    assert_eq!(rows(Variant::Full, heldout), three);
    assert_eq!(rows(Variant::Missing, Phase::Train), set(&["AAAA", "AABA", "AABB", "ABBA", "ABBB"]));
    assert_eq!(rows(Variant::Flipped, Phase::Train), three);
    assert_eq!(rows(Variant::Flipped, heldout), two);
    assert_eq!(rows(Variant::FlippedMissing, Phase::Train), set(&["ABCB", "ABCC"]));
}

/// Plug-in mutual information in bits between two discrete sequences.
fn mutual_information(xs: &[usize], ys: &[usize]) -> f64 {
    let n = xs.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut px: BTreeMap<usize, f64> = BTreeMap::new();
    let mut py: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in xs.iter().zip(ys) {
        *joint.entry((x, y)).or_default() += 1.0;
        *px.entry(x).or_default() += 1.0;
        *py.entry(y).or_default() += 1.0;
    }
    joint.iter().map(|(&(x, y), &c)| (c / n) * ((c * n) / (px[&x] * py[&y])).log2()).sum()
}

#[test]
fn spurious_colours_carry_no_label_information() {
    let n = 20_000;
    for (kind, slots) in [(TaskKind::SameDiff, 2), (TaskKind::SeparatedInputs, 4)] {
        let gen = Generator::new(TaskConfig { spurious: true, ..cfg(kind, 0) }).unwrap();
        let mut labels = Vec::new();
        let mut colours = vec![Vec::new(); slots];
        for i in 0..n {
            let ep = gen.episode(Phase::Train, 21, i).unwrap();
            let bg = ep.backgrounds();
            assert_eq!(bg.len(), slots, "{kind}");
            labels.push(ep.label);
            for (c, b) in colours.iter_mut().zip(bg) {
                c.push(b);
            }
        }
        // Plug-in bias for 100 colours × 2 labels at n = 20k is about 0.0036 bits.
        for (a, ca) in colours.iter().enumerate() {
            let mi = mutual_information(&labels, ca);
            assert!(mi < 0.01, "{kind}: I(label; colour {a}) = {mi}");
            for (b, cb) in colours.iter().enumerate().skip(a + 1) {
                let equal: Vec<usize> = ca.iter().zip(cb).map(|(x, y)| usize::from(x == y)).collect();
                let mi = mutual_information(&labels, &equal);
                assert!(mi < 0.01, "{kind}: I(label; colour {a} = colour {b}) = {mi}");
            }
        }
    }
}

#[test]
fn holdouts_outside_the_feasible_range_are_rejected() {
    for kind in cognitive_kinds() {
        let m = N_SHAPES - kind.k_min() + 1;
        assert!(Generator::new(cfg(kind, m)).is_err(), "{kind} accepted m = {m}");
        let m = kind.k_min_test() - 1;
        assert!(Generator::new(cfg(kind, m)).is_err(), "{kind} accepted m = {m}");
    }
}
