//! Synthetic two-composer data for exercising conditioning at toy scale, and
//! a rule-based style discriminator.

use rand::seq::SliceRandom;
use rand::Rng;
use remiforge_core::remi::{encode, to_ids, Token, Vocabulary};
use remiforge_core::{Completeness, Composer, Note, Score, TempoClass, TimeSignature};
use serde::{Deserialize, Serialize};

use crate::model::Sequence;

pub const SYNTH_BARS: usize = 8;
/// Leading bars shared by every style: one repeated pitch, so a four-bar
/// primer carries no style information. Intro bar `k` (1-based) holds `k`
/// evenly spaced notes, which marks where the intro ends without counting.
pub const INTRO_BARS: usize = 4;
const INTRO_PITCHES: [u8; 5] = [60, 62, 64, 65, 67];
const QUARTER: u32 = 12;
const BEATS_PER_BAR: u32 = 4;
const C_MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    /// Scale runs moving by step.
    Stepwise,
    /// Broken triads on I, IV, V and vi.
    Arpeggio,
    /// Wide random leaps. Appears only in pretraining data.
    Leaps,
}

impl Style {
    /// The composer label used for fine-tuning, if the style has one.
    pub fn composer(self) -> Option<Composer> {
        match self {
            Style::Stepwise => Some(Composer::Bach),
            Style::Arpeggio => Some(Composer::Chopin),
            Style::Leaps => None,
        }
    }
}

fn stepwise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u8> {
    let scale: Vec<u8> = (48..=84).filter(|p| C_MAJOR.contains(&(p % 12))).collect();
    let lo = scale.iter().position(|&p| p >= 55).expect("in range");
    let hi = scale.iter().rposition(|&p| p <= 79).expect("in range");
    let mut idx = rng.gen_range(scale.iter().position(|&p| p >= 60).unwrap()..=scale.iter().position(|&p| p >= 72).unwrap());
    let mut dir: isize = 1;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i % BEATS_PER_BAR as usize == 0 {
            dir = if rng.gen_bool(0.5) { 1 } else { -1 };
        }
        out.push(scale[idx]);
        let next = idx as isize + dir;
        if next < lo as isize || next > hi as isize {
            dir = -dir;
        }
        idx = (idx as isize + dir) as usize;
    }
    out
}

fn arpeggio<R: Rng + ?Sized>(bars: usize, rng: &mut R) -> Vec<u8> {
    // (root, third) for C, F, G and A minor.
    let chords: [(u8, u8); 4] = [(60, 4), (65, 4), (55, 4), (57, 3)];
    let mut out = Vec::new();
    for _ in 0..bars {
        let &(root, third) = chords.choose(rng).expect("chords");
        let mut figure = [root, root + third, root + 7, root + 12];
        if rng.gen_bool(0.5) {
            figure.reverse();
        }
        out.extend_from_slice(&figure);
    }
    out
}

fn leaps<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u8> {
    let mut p: i32 = rng.gen_range(52..=76);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(p as u8);
        let size = rng.gen_range(5..=12);
        let up = rng.gen_bool(0.5);
        p += if up { size } else { -size };
        if !(40..=88).contains(&p) {
            p += if up { -2 * size } else { 2 * size };
        }
    }
    out
}

/// An eight-bar 4/4 piece at 120 BPM: a repeated-note intro followed by
/// quarter-note figures in the given style.
pub fn synth_score<R: Rng + ?Sized>(style: Style, composer: Composer, rng: &mut R) -> Score {
    let bar = BEATS_PER_BAR * QUARTER;
    let body_bars = SYNTH_BARS - INTRO_BARS;
    let n = body_bars * BEATS_PER_BAR as usize;
    let drone = *INTRO_PITCHES.choose(rng).expect("intro pitches");
    let mut notes = Vec::new();
    for b in 0..INTRO_BARS as u32 {
        let k = b + 1;
        let spacing = bar / k;
        let duration = spacing - spacing % 3;
        notes.extend((0..k).map(|i| Note::new(drone, b * bar + i * spacing, duration)));
    }
    let body = match style {
        Style::Stepwise => stepwise(n, rng),
        Style::Arpeggio => arpeggio(body_bars, rng),
        Style::Leaps => leaps(n, rng),
    };
    let start = INTRO_BARS as u32 * bar;
    notes.extend(body.iter().enumerate().map(|(i, &p)| Note::new(p, start + i as u32 * QUARTER, QUARTER)));
    Score::new(
        TempoClass::Bpm120,
        &[TimeSignature::FourFour; SYNTH_BARS],
        notes,
        composer,
        Completeness::WHOLE,
    )
}

pub fn synth_sequence<R: Rng + ?Sized>(style: Style, composer: Composer, vocab: &Vocabulary, rng: &mut R) -> Sequence {
    let score = synth_score(style, composer, rng);
    let tokens = encode(&score).expect("synthetic scores are valid");
    Sequence {
        ids: to_ids(&tokens, vocab).expect("tokens are in the vocabulary"),
        composer,
    }
}

/// Unlabelled pieces cycling through all three styles.
pub fn pretrain_corpus<R: Rng + ?Sized>(n: usize, vocab: &Vocabulary, rng: &mut R) -> Vec<Sequence> {
    let styles = [Style::Stepwise, Style::Arpeggio, Style::Leaps];
    (0..n)
        .map(|i| synth_sequence(styles[i % 3], Composer::Unspecified, vocab, rng))
        .collect()
}

/// `per_style` pieces of each labelled style.
pub fn finetune_corpus<R: Rng + ?Sized>(per_style: usize, vocab: &Vocabulary, rng: &mut R) -> Vec<Sequence> {
    let mut out = Vec::with_capacity(2 * per_style);
    for _ in 0..per_style {
        for style in [Style::Stepwise, Style::Arpeggio] {
            let composer = style.composer().expect("labelled style");
            out.push(synth_sequence(style, composer, vocab, rng));
        }
    }
    out
}

/// Pitches of the `NotePitch` tokens in sequence order.
pub fn pitch_line(ids: &[u32], vocab: &Vocabulary) -> Vec<u8> {
    ids.iter()
        .filter_map(|&id| match vocab.token(id) {
            Ok(Token::NotePitch(p)) => Some(p),
            _ => None,
        })
        .collect()
}

/// Share of melodic intervals (repeated notes excluded) that are one or two
/// semitones.
pub fn step_fraction(pitches: &[u8]) -> Option<f64> {
    let moves: Vec<u8> = pitches.windows(2).map(|w| w[0].abs_diff(w[1])).filter(|&d| d > 0).collect();
    if moves.is_empty() {
        return None;
    }
    let steps = moves.iter().filter(|&&d| d <= 2).count();
    Some(steps as f64 / moves.len() as f64)
}

/// Labels a token sequence as stepwise when at least half of its melodic
/// intervals are steps, otherwise as arpeggiated.
pub fn classify(ids: &[u32], vocab: &Vocabulary) -> Option<Style> {
    let frac = step_fraction(&pitch_line(ids, vocab))?;
    Some(if frac >= 0.5 { Style::Stepwise } else { Style::Arpeggio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discriminator_separates_the_generators() {
        let vocab = Vocabulary::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let a = synth_sequence(Style::Stepwise, Composer::Bach, &vocab, &mut rng);
            let b = synth_sequence(Style::Arpeggio, Composer::Chopin, &vocab, &mut rng);
            let c = synth_sequence(Style::Leaps, Composer::Unspecified, &vocab, &mut rng);
            assert_eq!(classify(&a.ids, &vocab), Some(Style::Stepwise));
            assert_eq!(classify(&b.ids, &vocab), Some(Style::Arpeggio));
            assert_eq!(classify(&c.ids, &vocab), Some(Style::Arpeggio));
            assert!(step_fraction(&pitch_line(&a.ids, &vocab)).unwrap() >= 0.9);
        }
    }

    #[test]
    fn synthetic_pieces_are_valid_and_fit_the_toy_context() {
        let vocab = Vocabulary::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for s in pretrain_corpus(30, &vocab, &mut rng) {
            // Intro bars hold 1 to 4 notes, body bars 4.
            assert_eq!(s.ids.len(), 3 + 8 * 2 + 3 * (1 + 2 + 3 + 4 + 16) + 1);
            assert_eq!(s.composer, Composer::Unspecified);
            assert_eq!(s.ids[0], vocab.id(Token::Composer(Composer::Unspecified)).unwrap());
        }
        let ft = finetune_corpus(5, &vocab, &mut rng);
        assert_eq!(ft.len(), 10);
        assert_eq!(ft.iter().filter(|s| s.composer == Composer::Bach).count(), 5);
        for s in ft {
            assert_eq!(s.ids[0], vocab.id(Token::Composer(s.composer)).unwrap());
        }
    }

    #[test]
    fn intro_is_shared_across_styles() {
        let vocab = Vocabulary::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for style in [Style::Stepwise, Style::Arpeggio, Style::Leaps] {
            let line = pitch_line(&synth_sequence(style, Composer::Unspecified, &vocab, &mut rng).ids, &vocab);
            let intro = &line[..10];
            assert!(intro.iter().all(|&p| p == intro[0]));
            assert!(INTRO_PITCHES.contains(&intro[0]));
        }
    }

    #[test]
    fn step_fraction_edges() {
        assert_eq!(step_fraction(&[60]), None);
        assert_eq!(step_fraction(&[60, 60, 60]), None);
        assert_eq!(step_fraction(&[60, 62, 62, 67]), Some(0.5));
    }
}
