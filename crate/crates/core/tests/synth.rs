use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use textseg::lm::NGramModel;
use textseg::sample::{LineInput, TextLineSample};
use textseg::synth::{
    sample_text, synth_offline_line, synth_online_line, synth_real_line, GlyphBank, OfflineConfig, OnlineConfig,
    RealConfig, TextSource,
};

fn text_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..20, 1..9)
}

fn check_invariant(s: &TextLineSample) -> Result<(), TestCaseError> {
    let boxes = s.boxes.as_ref().expect("generated lines carry boxes");
    prop_assert_eq!(boxes.len(), s.transcript.len());
    for (b, &c) in boxes.iter().zip(&s.transcript) {
        prop_assert_eq!(b.class_id, c);
        prop_assert!(b.rect.is_valid());
    }
    for w in boxes.windows(2) {
        prop_assert!(w[0].rect.center().0 < w[1].rect.center().0, "boxes out of order");
        prop_assert!(w[0].rect.x_min <= w[1].rect.x_min);
    }
    Ok(())
}

fn raster(s: &TextLineSample) -> &textseg::preprocess::Raster {
    match &s.input {
        LineInput::Raster(r) => r,
        other => panic!("expected a raster, got {}", other.kind()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn offline_lines_are_ordered_and_deterministic(text in text_strategy(), seed in any::<u64>()) {
        let bank = GlyphBank::builtin();
        let cfg = OfflineConfig::default();
        let a = synth_offline_line(&bank, &text, seed, &cfg).unwrap();
        check_invariant(&a)?;
        prop_assert_eq!(raster(&a).height(), cfg.target_height);
        // Neighbours never overlap so much that suppression at 0.5 would merge them.
        for w in a.boxes.as_ref().unwrap().windows(2) {
            prop_assert!(w[0].rect.interval_iou(&w[1].rect) < 0.5);
        }
        prop_assert_eq!(a, synth_offline_line(&bank, &text, seed, &cfg).unwrap());
    }

    #[test]
    fn real_lines_satisfy_the_sample_invariant(text in text_strategy(), seed in any::<u64>()) {
        let bank = GlyphBank::builtin();
        let cfg = RealConfig::default();
        let a = synth_real_line(&bank, &text, seed, &cfg).unwrap();
        check_invariant(&a)?;
        prop_assert_eq!(raster(&a).height(), cfg.render.target_height);
        prop_assert!(raster(&a).pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(a, synth_real_line(&bank, &text, seed, &cfg).unwrap());
    }

    #[test]
    fn online_points_belong_to_exactly_one_box(text in text_strategy(), seed in any::<u64>()) {
        let bank = GlyphBank::builtin();
        let cfg = OnlineConfig::default();
        let s = synth_online_line(&bank, &text, seed, &cfg).unwrap();
        check_invariant(&s)?;
        let LineInput::Trajectory(t) = &s.input else { panic!("expected a trajectory") };
        let boxes = s.boxes.as_ref().unwrap();
        for p in t.points() {
            let owners = boxes.iter().filter(|b| b.rect.contains(p.0, p.1)).count();
            prop_assert_eq!(owners, 1, "point {:?}", p);
        }
        // The instances are drawn first, so they can be replayed.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let expected: usize = text.iter().map(|&c| bank.instance(c, &cfg.perturbation, &mut rng).point_count()).sum();
        prop_assert_eq!(t.point_count(), expected);
    }
}

#[test]
fn single_online_character_is_a_shifted_instance() {
    let bank = GlyphBank::builtin();
    let cfg = OnlineConfig::default();
    for class in 0..bank.len() {
        let seed = 1000 + class as u64;
        let s = synth_online_line(&bank, &[class], seed, &cfg).unwrap();
        let LineInput::Trajectory(t) = &s.input else { panic!() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = bank.instance(class, &cfg.perturbation, &mut rng);
        let h = cfg.glyph_height * inst.scale;
        let got: Vec<(f64, f64)> = t.points().collect();
        let want: Vec<[f64; 2]> = inst.strokes.iter().flatten().copied().collect();
        assert_eq!(got.len(), want.len());
        let off = (got[0].0 - want[0][0] * h, got[0].1 - want[0][1] * h);
        for (g, w) in got.iter().zip(&want) {
            assert!((g.0 - w[0] * h - off.0).abs() < 1e-9 && (g.1 - w[1] * h - off.1).abs() < 1e-9);
        }
        assert_eq!(t.strokes.len(), inst.strokes.len());
    }
}

#[test]
fn single_offline_glyph_box_covers_its_ink() {
    let bank = GlyphBank::builtin();
    let cfg = OfflineConfig::default();
    for class in 0..bank.len() {
        let s = synth_offline_line(&bank, &[class], 77 + class as u64, &cfg).unwrap();
        let r = raster(&s);
        let b = s.boxes.as_ref().unwrap()[0].rect;
        let mut ink = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for row in 0..r.height() {
            for col in 0..r.width() {
                if r.get(row, col) < 0.5 {
                    ink = (
                        ink.0.min(col as f64),
                        ink.1.min(row as f64),
                        ink.2.max(col as f64 + 1.0),
                        ink.3.max(row as f64 + 1.0),
                    );
                }
            }
        }
        // Anti-aliased ink edges may fall either side of a pixel boundary.
        let tol = 1.5;
        assert!((b.x_min - ink.0).abs() <= tol, "class {class}: {b:?} vs {ink:?}");
        assert!((b.y_min - ink.1).abs() <= tol, "class {class}: {b:?} vs {ink:?}");
        assert!((b.x_max - ink.2).abs() <= tol, "class {class}: {b:?} vs {ink:?}");
        assert!((b.y_max - ink.3).abs() <= tol, "class {class}: {b:?} vs {ink:?}");
    }
}

#[test]
fn unit_length_range_gives_single_ids() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        assert_eq!(sample_text(TextSource::Uniform(20), (1, 1), &mut rng).unwrap().len(), 1);
    }
    assert!(sample_text(TextSource::Uniform(0), (1, 3), &mut rng).is_err());
    assert!(sample_text(TextSource::Uniform(4), (3, 2), &mut rng).is_err());
}

#[test]
fn uniform_text_has_uniform_class_frequencies() {
    let k = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut counts = vec![0usize; k];
    let mut n = 0usize;
    for _ in 0..4000 {
        for c in sample_text(TextSource::Uniform(k), (3, 8), &mut rng).unwrap() {
            counts[c] += 1;
            n += 1;
        }
    }
    let p = 1.0 / k as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for (c, &m) in counts.iter().enumerate() {
        assert!((m as f64 - n as f64 * p).abs() < 5.0 * sigma, "class {c}: {m} of {n}");
    }
}

#[test]
fn trigram_text_never_repeats_in_an_alternating_corpus() {
    let corpus: Vec<Vec<usize>> = (0..20).map(|_| (0..30).map(|k| k % 2).collect()).collect();
    let lm = NGramModel::train(&corpus, 2, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let t = sample_text(TextSource::Lm(&lm), (2, 12), &mut rng).unwrap();
        assert!(t.windows(2).all(|w| w[0] != w[1]), "{t:?}");
    }
}
