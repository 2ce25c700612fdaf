//! Four-chord progression mining with key and phase normalization.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::chords::Chord;
use super::StyleError;

pub const WINDOW: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChordProgression {
    pub chords: [Chord; WINDOW],
    pub canonical: bool,
}

impl fmt::Display for ChordProgression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.chords.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

fn to_c_root(chords: [Chord; WINDOW]) -> [Chord; WINDOW] {
    let shift = -i32::from(chords[0].root);
    chords.map(|c| c.transpose(shift))
}

fn rotate(chords: [Chord; WINDOW], by: usize) -> [Chord; WINDOW] {
    std::array::from_fn(|i| chords[(i + by) % WINDOW])
}

/// Canonical form of a window: transposed so the first root is C, and the
/// smaller of the window and its two-step rotation. Alternating windows
/// (A-B-A-B) are also identified with their one-step rotation (B-A-B-A),
/// which the two-step rotation alone cannot reach.
pub fn canonicalize(window: [Chord; WINDOW]) -> ChordProgression {
    let mut candidates = vec![to_c_root(window), to_c_root(rotate(window, 2))];
    if window[0] == window[2] && window[1] == window[3] {
        candidates.push(to_c_root(rotate(window, 1)));
    }
    let chords = candidates.into_iter().min().expect("non-empty");
    ChordProgression {
        chords,
        canonical: true,
    }
}

/// Canonical progression counts. `ranked` orders by descending count, then
/// ascending progression.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProgressionTable {
    pub counts: BTreeMap<ChordProgression, usize>,
}

impl ProgressionTable {
    pub fn ranked(&self) -> Vec<(ChordProgression, usize)> {
        let mut out: Vec<_> = self.counts.iter().map(|(&p, &c)| (p, c)).collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    pub fn top(&self, n: usize) -> Vec<ChordProgression> {
        self.ranked().into_iter().take(n).map(|(p, _)| p).collect()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Adds another table's counts into this one.
    pub fn merge(&mut self, other: &ProgressionTable) {
        for (&p, &c) in &other.counts {
            *self.counts.entry(p).or_default() += c;
        }
    }
}

/// Counts every stride-1 window of four recognized chords; unrecognized
/// entries are skipped before windowing.
pub fn mine_progressions(chords: &[Option<Chord>]) -> Result<ProgressionTable, StyleError> {
    let seq: Vec<Chord> = chords.iter().flatten().copied().collect();
    if seq.len() < WINDOW {
        return Err(StyleError::TooFewChords { found: seq.len() });
    }
    let mut table = ProgressionTable::default();
    for w in seq.windows(WINDOW) {
        let window: [Chord; WINDOW] = w.try_into().expect("window size");
        *table.counts.entry(canonicalize(window)).or_default() += 1;
    }
    Ok(table)
}
