use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use remiforge_core::corpus::{augment_score, repair_overlong_notes};
use remiforge_core::generate::{random_score, ScoreShape};
use remiforge_core::metrics::{groove_similarity, pitch_class_entropy, GrooveVector};
use remiforge_core::remi::{decode, encode, from_ids, to_ids, Token, Vocabulary};
use remiforge_core::style::{map_at_k, mine_progressions, ndcg_at_k, Chord, ChordQuality};
use remiforge_core::{parse_midi, write_midi};

fn score_from_seed(seed: u64, max_bars: usize) -> remiforge_core::Score {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_score(
        &mut rng,
        &ScoreShape {
            max_bars,
            ..ScoreShape::default()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn token_round_trip(seed in any::<u64>()) {
        let s = score_from_seed(seed, 32);
        let tokens = encode(&s).unwrap();
        prop_assert_eq!(decode(&tokens).unwrap(), s);
        let vocab = Vocabulary::new();
        prop_assert_eq!(from_ids(&to_ids(&tokens, &vocab).unwrap(), &vocab).unwrap(), tokens);
    }

    #[test]
    fn midi_round_trip(seed in any::<u64>()) {
        let s = score_from_seed(seed, 12);
        let parsed = parse_midi(&write_midi(&s)).unwrap();
        prop_assert_eq!(&parsed, &s);
        // Quantization is idempotent on an already quantized score.
        prop_assert_eq!(parse_midi(&write_midi(&parsed)).unwrap(), parsed);
    }

    #[test]
    fn transposition_only_moves_pitches(seed in any::<u64>(), shift in -12i32..=12) {
        let s = score_from_seed(seed, 8);
        if let Some(t) = s.transpose(shift) {
            let a = encode(&s).unwrap();
            let b = encode(&t).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                match (x, y) {
                    (Token::NotePitch(p), Token::NotePitch(q)) => prop_assert_eq!(i32::from(*q) - i32::from(*p), shift),
                    _ => prop_assert_eq!(x, y),
                }
            }
            let ha = pitch_class_entropy(&s).unwrap();
            let hb = pitch_class_entropy(&t).unwrap();
            prop_assert!((ha - hb).abs() < 1e-12);
        }
    }

    #[test]
    fn augmentation_stays_on_keyboard(seed in any::<u64>(), shift in -3i32..=3) {
        let s = score_from_seed(seed, 4);
        let (t, eff) = augment_score(&s, shift);
        prop_assert!(eff.abs() <= shift.abs());
        prop_assert!(eff == 0 || eff.signum() == shift.signum());
        prop_assert!(t.notes.iter().all(|n| (21..=108).contains(&n.pitch)));
    }

    #[test]
    fn repaired_notes_fit_in_a_bar(seed in any::<u64>()) {
        let s = score_from_seed(seed, 8);
        let r = repair_overlong_notes(&s);
        for n in &r.notes {
            let bar = &r.bars[r.bar_at(n.onset).unwrap()];
            prop_assert!(n.duration <= bar.time_signature.bar_ticks());
        }
    }

    #[test]
    fn groove_distance_is_a_metric(a in any::<[bool; 32]>(), b in any::<[bool; 32]>(), c in any::<[bool; 32]>(),
                                   a2 in any::<[bool; 32]>(), b2 in any::<[bool; 32]>(), c2 in any::<[bool; 32]>()) {
        let mk = |x: [bool; 32], y: [bool; 32]| {
            let mut v = [false; 64];
            v[..32].copy_from_slice(&x);
            v[32..].copy_from_slice(&y);
            GrooveVector(v)
        };
        let (a, b, c) = (mk(a, a2), mk(b, b2), mk(c, c2));
        let d = |x: &GrooveVector, y: &GrooveVector| 1.0 - groove_similarity(x, y);
        prop_assert_eq!(groove_similarity(&a, &a), 1.0);
        prop_assert_eq!(groove_similarity(&a, &b), groove_similarity(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }
}

/// Every single-token deletion or insertion of a valid encoding is either
/// rejected, or decodes to a score that re-encodes to exactly the mutated
/// sequence (ignoring trailing padding).
#[test]
fn grammar_soundness_under_single_token_edits() {
    let vocab = Vocabulary::new();
    let check = |seq: &[Token]| {
        if let Ok(s) = decode(seq) {
            let end = seq.iter().rposition(|&t| t != Token::Pad).map_or(0, |i| i + 1);
            let re = encode(&s).unwrap_or_else(|e| panic!("accepted {seq:?} but cannot re-encode: {e}"));
            assert_eq!(re, &seq[..end]);
        }
    };
    for seed in 0..6 {
        let s = score_from_seed(seed, 3);
        let tokens = encode(&s).unwrap();
        for i in 0..tokens.len() {
            let mut m = tokens.clone();
            m.remove(i);
            check(&m);
        }
        for i in 0..=tokens.len() {
            for &t in vocab.tokens() {
                let mut m = tokens.clone();
                m.insert(i, t);
                check(&m);
            }
        }
    }
}

fn random_chords(rng: &mut ChaCha8Rng, n: usize) -> Vec<Option<Chord>> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.1) {
                None
            } else {
                Some(Chord::new(rng.gen_range(0..12), ChordQuality::ALL[rng.gen_range(0..7)]))
            }
        })
        .collect()
}

#[test]
fn progression_tables_are_key_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let chords = random_chords(&mut rng, 24);
        let base = mine_progressions(&chords).unwrap();
        for k in 1..12 {
            let moved: Vec<_> = chords.iter().map(|c| c.map(|c| c.transpose(k))).collect();
            assert_eq!(mine_progressions(&moved).unwrap(), base);
        }
    }
}

fn brute_ap(model: &[u32], rel: &HashSet<u32>, k: usize) -> f64 {
    let top = &model[..k.min(model.len())];
    let denom = k.min(rel.len());
    if denom == 0 || model.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for r in 1..=top.len() {
        if rel.contains(&top[r - 1]) {
            let hits_so_far = top[..r].iter().filter(|x| rel.contains(x)).count();
            total += hits_so_far as f64 / r as f64;
        }
    }
    total / denom as f64
}

#[test]
fn ranking_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let k = rng.gen_range(1..=20);
        let model: Vec<u32> = (0..rng.gen_range(0..30)).map(|_| rng.gen_range(0..40)).collect::<HashSet<_>>().into_iter().collect();
        let rel: HashSet<u32> = (0..k).map(|_| rng.gen_range(0..40)).collect();
        assert!((map_at_k(&model, &rel, k) - brute_ap(&model, &rel, k)).abs() < 1e-12);
        let ndcg = ndcg_at_k(&model, &rel, k);
        assert!((0.0..=1.0 + 1e-12).contains(&ndcg));
    }
}
