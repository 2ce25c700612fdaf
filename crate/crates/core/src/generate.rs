//! Random valid scores for property tests and fuzzing.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::remi::{legal_durations, DURATION_STEP};
use crate::score::{Completeness, Composer, Note, Score, TempoClass, TimeSignature, MAX_PITCH, MIN_PITCH};

#[derive(Debug, Clone)]
pub struct ScoreShape {
    pub min_bars: usize,
    pub max_bars: usize,
    pub signatures: Vec<TimeSignature>,
    /// Upper bound on occupied beat positions per bar.
    pub max_onsets_per_bar: usize,
    pub max_chord_size: usize,
    pub pitch_range: (u8, u8),
}

impl Default for ScoreShape {
    fn default() -> Self {
        ScoreShape {
            min_bars: 1,
            max_bars: 32,
            signatures: TimeSignature::ALL.to_vec(),
            max_onsets_per_bar: 8,
            max_chord_size: 3,
            pitch_range: (MIN_PITCH, MAX_PITCH),
        }
    }
}

/// Generates a score whose durations are all tokenizable and which has no
/// overlapping notes of equal pitch, so it survives both the token and the
/// MIDI round trip unchanged.
pub fn random_score<R: Rng + ?Sized>(rng: &mut R, shape: &ScoreShape) -> Score {
    let n_bars = rng.gen_range(shape.min_bars..=shape.max_bars);
    let signatures: Vec<TimeSignature> = (0..n_bars)
        .map(|_| *shape.signatures.choose(rng).expect("non-empty signature set"))
        .collect();
    let durations: Vec<u32> = legal_durations().collect();
    let mut busy_until: HashMap<u8, u32> = HashMap::new();
    let mut notes = Vec::new();
    let mut start = 0;
    for ts in &signatures {
        let grid = ts.grid_size();
        let n_onsets = rng.gen_range(0..=shape.max_onsets_per_bar.min(grid as usize));
        let mut positions: Vec<u32> = (0..grid).collect();
        positions.shuffle(rng);
        let mut positions = positions[..n_onsets].to_vec();
        positions.sort_unstable();
        for pos in positions {
            let onset = start + pos;
            let chord = rng.gen_range(1..=shape.max_chord_size);
            for _ in 0..chord {
                let pitch = rng.gen_range(shape.pitch_range.0..=shape.pitch_range.1);
                if busy_until.get(&pitch).is_some_and(|&end| end > onset) {
                    continue;
                }
                let duration = *durations.choose(rng).expect("durations");
                busy_until.insert(pitch, onset + duration);
                notes.push(Note::new(pitch, onset, duration));
            }
        }
        start += ts.bar_ticks();
    }
    if notes.is_empty() {
        let pitch = rng.gen_range(shape.pitch_range.0..=shape.pitch_range.1);
        notes.push(Note::new(pitch, 0, DURATION_STEP));
    }
    Score::new(
        *TempoClass::ALL.choose(rng).expect("tempo"),
        &signatures,
        notes,
        *Composer::ALL.choose(rng).expect("composer"),
        Completeness {
            has_true_start: rng.gen(),
            has_true_end: rng.gen(),
        },
    )
}
