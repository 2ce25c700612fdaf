//! Template-matching chord recognizer.
//!
//! Each half bar yields a duration-weighted pitch-class profile which is
//! scored against binary templates for seven chord qualities at all twelve
//! roots. The score of a template is its inner product with the profile
//! divided by the template size; ties prefer the larger raw inner product
//! (so C-E-G-B♭ reads as C7 rather than C major), then the lower root and
//! the earlier quality in [`ChordQuality::ALL`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::score::Score;

pub const PITCH_CLASS_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChordQuality {
    Major,
    Minor,
    Minor7,
    Dominant7,
    Diminished,
    Augmented,
    Suspended,
}

impl ChordQuality {
    pub const ALL: [ChordQuality; 7] = [
        ChordQuality::Major,
        ChordQuality::Minor,
        ChordQuality::Minor7,
        ChordQuality::Dominant7,
        ChordQuality::Diminished,
        ChordQuality::Augmented,
        ChordQuality::Suspended,
    ];

    pub fn intervals(self) -> &'static [u8] {
        match self {
            ChordQuality::Major => &[0, 4, 7],
            ChordQuality::Minor => &[0, 3, 7],
            ChordQuality::Minor7 => &[0, 3, 7, 10],
            ChordQuality::Dominant7 => &[0, 4, 7, 10],
            ChordQuality::Diminished => &[0, 3, 6],
            ChordQuality::Augmented => &[0, 4, 8],
            ChordQuality::Suspended => &[0, 5, 7],
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ChordQuality::Major => "M",
            ChordQuality::Minor => "m",
            ChordQuality::Minor7 => "m7",
            ChordQuality::Dominant7 => "7",
            ChordQuality::Diminished => "dim",
            ChordQuality::Augmented => "aug",
            ChordQuality::Suspended => "sus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Chord {
    /// Pitch class, C = 0.
    pub root: u8,
    pub quality: ChordQuality,
}

impl Chord {
    pub fn new(root: u8, quality: ChordQuality) -> Self {
        Chord {
            root: root % 12,
            quality,
        }
    }

    pub fn transpose(self, semitones: i32) -> Self {
        Chord::new((i32::from(self.root) + semitones).rem_euclid(12) as u8, self.quality)
    }

    pub fn pitch_classes(self) -> impl Iterator<Item = usize> {
        self.quality
            .intervals()
            .iter()
            .map(move |&i| usize::from((self.root + i) % 12))
    }
}

impl fmt::Display for Chord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", PITCH_CLASS_NAMES[usize::from(self.root)], self.quality.symbol())
    }
}

impl FromStr for Chord {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (root, quality) = s.split_once(':').ok_or_else(|| format!("bad chord `{s}`"))?;
        let root = PITCH_CLASS_NAMES
            .iter()
            .position(|&n| n == root)
            .ok_or_else(|| format!("bad root in `{s}`"))?;
        let quality = ChordQuality::ALL
            .into_iter()
            .find(|q| q.symbol() == quality)
            .ok_or_else(|| format!("bad quality in `{s}`"))?;
        Ok(Chord::new(root as u8, quality))
    }
}

/// Best matching chord for a profile, with its normalized score. Profiles
/// with fewer than two sounding pitch classes are underdetermined.
pub fn recognize(profile: &[f64; 12]) -> Option<(Chord, f64)> {
    if profile.iter().filter(|&&w| w > 0.0).count() < 2 {
        return None;
    }
    let mut best: Option<(Chord, f64, f64)> = None;
    for root in 0..12u8 {
        for quality in ChordQuality::ALL {
            let chord = Chord::new(root, quality);
            let inner: f64 = chord.pitch_classes().map(|pc| profile[pc]).sum();
            let score = inner / quality.intervals().len() as f64;
            let better = match best {
                None => true,
                Some((_, s, i)) => {
                    let scale = s.abs().max(1.0);
                    score > s + TIE_EPS * scale || ((score - s).abs() <= TIE_EPS * scale && inner > i + TIE_EPS * scale)
                }
            };
            if better {
                best = Some((chord, score, inner));
            }
        }
    }
    best.map(|(c, s, _)| (c, s))
}

/// Duration-weighted pitch-class profile of `[start, end)`.
pub fn window_profile(score: &Score, start: u32, end: u32) -> [f64; 12] {
    let mut profile = [0.0; 12];
    for note in &score.notes {
        let lo = note.onset.max(start);
        let hi = note.end().min(end);
        if hi > lo {
            profile[usize::from(note.pitch % 12)] += f64::from(hi - lo);
        }
    }
    profile
}

/// One chord (or none) per bar, from two half-bar windows. Agreeing windows
/// give their chord; disagreeing windows give the better-scoring one (the
/// first on a tie); a single recognized window wins over an empty one.
pub fn extract_chords(score: &Score) -> Vec<(usize, Option<Chord>)> {
    score
        .bars
        .iter()
        .map(|bar| {
            let half = bar.time_signature.bar_ticks() / 2;
            let first = recognize(&window_profile(score, bar.start_tick, bar.start_tick + half));
            let second = recognize(&window_profile(score, bar.start_tick + half, bar.end_tick()));
            let chord = match (first, second) {
                (Some((a, sa)), Some((b, sb))) => Some(if a == b || sa >= sb { a } else { b }),
                (Some((a, _)), None) => Some(a),
                (None, Some((b, _))) => Some(b),
                (None, None) => None,
            };
            (bar.index, chord)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{Completeness, Composer, Note, TempoClass, TimeSignature};

    fn bar_of(pitches: &[u8]) -> Score {
        Score::new(
            TempoClass::Bpm120,
            &[TimeSignature::FourFour],
            pitches.iter().map(|&p| Note::new(p, 0, 48)).collect(),
            Composer::Unspecified,
            Completeness::WHOLE,
        )
    }

    #[test]
    fn major_triad() {
        assert_eq!(extract_chords(&bar_of(&[60, 64, 67])), vec![(0, Some("C:M".parse().unwrap()))]);
    }

    #[test]
    fn dominant_seventh() {
        assert_eq!(extract_chords(&bar_of(&[60, 64, 67, 70])), vec![(0, Some("C:7".parse().unwrap()))]);
    }

    #[test]
    fn single_pitch_is_none() {
        assert_eq!(extract_chords(&bar_of(&[60, 72])), vec![(0, None)]);
    }

    #[test]
    fn every_template_recognizes_itself() {
        for root in 0..12u8 {
            for quality in ChordQuality::ALL {
                let chord = Chord::new(root, quality);
                let mut profile = [0.0; 12];
                for pc in chord.pitch_classes() {
                    profile[pc] = 1.0;
                }
                let got = recognize(&profile).unwrap().0;
                // Augmented triads are symmetric; any of the three roots is the same set.
                if quality == ChordQuality::Augmented {
                    assert_eq!(got.quality, quality);
                    assert_eq!((got.root + 12 - root) % 4, 0);
                } else {
                    assert_eq!(got, chord, "{chord}");
                }
            }
        }
    }

    #[test]
    fn display_round_trip() {
        for root in 0..12 {
            for q in ChordQuality::ALL {
                let c = Chord::new(root, q);
                assert_eq!(c.to_string().parse::<Chord>().unwrap(), c);
            }
        }
    }
}
