use proptest::prelude::*;

use textseg::alphabet::Alphabet;
use textseg::lm::{format_corpus, parse_corpus, ContextLevel, NGramModel};

const K: f64 = 0.01;

fn corpus_strategy() -> impl Strategy<Value = (usize, Vec<Vec<usize>>)> {
    (1usize..6).prop_flat_map(|v| (Just(v), prop::collection::vec(prop::collection::vec(0..v, 0..12), 1..6)))
}

/// Every context of length 0, 1 and 2 over the vocabulary.
fn contexts(v: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for a in 0..v {
        out.push(vec![a]);
        for b in 0..v {
            out.push(vec![a, b]);
        }
    }
    out
}

#[test]
fn hand_counted_table() {
    // a b c a b c a b a d
    let line = vec![0, 1, 2, 0, 1, 2, 0, 1, 0, 3];
    let lm = NGramModel::train(&[line], 4, K).unwrap();
    let p = |num: f64, den: f64| (num + K) / (den + 4.0 * K);
    let cases: [(usize, &[usize], f64, ContextLevel); 8] = [
        // Line start: one "a" after two pads.
        (0, &[], p(1.0, 1.0), ContextLevel::Trigram),
        (1, &[0], p(1.0, 1.0), ContextLevel::Trigram),
        // After "a b": c, c, a.
        (2, &[0, 1], p(2.0, 3.0), ContextLevel::Trigram),
        (0, &[0, 1], p(1.0, 3.0), ContextLevel::Trigram),
        (3, &[0, 1], p(0.0, 3.0), ContextLevel::Trigram),
        (3, &[1, 0], p(1.0, 1.0), ContextLevel::Trigram),
        // "c b" never occurs; after "b" alone: c, c, a.
        (2, &[2, 1], p(2.0, 3.0), ContextLevel::Bigram),
        // Nothing ever follows "d": unigram counts a4 b3 c2 d1.
        (0, &[3, 3], p(4.0, 10.0), ContextLevel::Unigram),
    ];
    for (label, ctx, want, level) in cases {
        assert!((lm.prob(label, ctx) - want).abs() < 1e-15, "P({label}|{ctx:?})");
        assert_eq!(lm.context_level(ctx), level, "{ctx:?}");
    }
    // Only the last two labels matter.
    assert_eq!(lm.prob(2, &[3, 3, 0, 1]), lm.prob(2, &[0, 1]));
}

#[test]
fn out_of_vocabulary_label_gets_the_unigram_floor() {
    let lm = NGramModel::train(&[vec![0, 1, 1]], 2, K).unwrap();
    let floor = K / (3.0 + 2.0 * K);
    assert!((lm.prob(7, &[0]) - floor).abs() < 1e-15);
    assert!(lm.logp(7, &[0]).is_finite());
}

proptest! {
    #[test]
    fn every_context_is_normalized((v, corpus) in corpus_strategy()) {
        prop_assume!(corpus.iter().any(|l| !l.is_empty()));
        let lm = NGramModel::train(&corpus, v, K).unwrap();
        for ctx in contexts(v) {
            let total: f64 = (0..v).map(|l| lm.logp(l, &ctx).exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "context {:?} sums to {}", ctx, total);
            for l in 0..v {
                let lp = lm.logp(l, &ctx);
                prop_assert!(lp.is_finite() && lp <= 0.0);
            }
        }
    }

    #[test]
    fn serialization_round_trips((v, corpus) in corpus_strategy()) {
        prop_assume!(corpus.iter().any(|l| !l.is_empty()));
        let lm = NGramModel::train(&corpus, v, K).unwrap();
        let bytes = lm.to_bytes();
        prop_assert_eq!(&NGramModel::from_bytes(&bytes).unwrap(), &lm);
        prop_assert!(NGramModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn corpus_text_round_trips(lines in prop::collection::vec(prop::collection::vec(0usize..20, 1..15), 1..10)) {
        let a = Alphabet::latin(20).unwrap();
        prop_assert_eq!(parse_corpus(&format_corpus(&lines, &a), &a).unwrap(), lines);
    }
}

#[test]
fn rejects_bad_training_input() {
    assert!(NGramModel::train(&[vec![0]], 0, K).is_err());
    assert!(NGramModel::train(&[vec![]], 3, K).is_err());
    assert!(NGramModel::train(&[vec![5]], 3, K).is_err());
    assert!(NGramModel::train(&[vec![0]], 3, 0.0).is_err());
}
