//! Quantized piano score: the shared representation every other stage reads.
//!
//! Time is measured in integer ticks at [`TICKS_PER_QUARTER`] ticks per quarter
//! note. At that resolution one tick is exactly one beat-grid position for
//! every supported time signature, so a note onset's grid index is simply its
//! offset from the start of its bar.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Internal resolution, fixed everywhere downstream of the MIDI parser.
pub const TICKS_PER_QUARTER: u32 = 12;
/// A0.
pub const MIN_PITCH: u8 = 21;
/// C8.
pub const MAX_PITCH: u8 = 108;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoreError {
    #[error("invalid time signature {numerator}/{denominator}")]
    InvalidSignature { numerator: u32, denominator: u32 },
    #[error("score invariant violated: {0}")]
    InvariantViolation(String),
}

/// The five bar signatures the token vocabulary can express.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TimeSignature {
    TwoFour,
    ThreeFour,
    FourFour,
    ThreeEight,
    SixEight,
}

impl TimeSignature {
    pub const ALL: [TimeSignature; 5] = [
        TimeSignature::TwoFour,
        TimeSignature::ThreeFour,
        TimeSignature::FourFour,
        TimeSignature::ThreeEight,
        TimeSignature::SixEight,
    ];

    pub fn numerator(self) -> u32 {
        match self {
            TimeSignature::TwoFour => 2,
            TimeSignature::ThreeFour | TimeSignature::ThreeEight => 3,
            TimeSignature::FourFour => 4,
            TimeSignature::SixEight => 6,
        }
    }

    pub fn denominator(self) -> u32 {
        match self {
            TimeSignature::TwoFour | TimeSignature::ThreeFour | TimeSignature::FourFour => 4,
            TimeSignature::ThreeEight | TimeSignature::SixEight => 8,
        }
    }

    /// Number of beat positions in one bar: 12 per quarter, 6 per eighth.
    pub fn grid_size(self) -> u32 {
        let per_unit = if self.denominator() == 4 { 12 } else { 6 };
        self.numerator() * per_unit
    }

    /// Bar length in ticks. Equal to the grid size at 12 ticks per quarter.
    pub fn bar_ticks(self) -> u32 {
        self.numerator() * 4 * TICKS_PER_QUARTER / self.denominator()
    }

    pub fn from_parts(numerator: u32, denominator: u32) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|ts| ts.numerator() == numerator && ts.denominator() == denominator)
    }
}

impl fmt::Display for TimeSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator(), self.denominator())
    }
}

impl FromStr for TimeSignature {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ScoreError::InvalidSignature {
            numerator: 0,
            denominator: 0,
        };
        let (n, d) = s.split_once('/').ok_or_else(bad)?;
        let n: u32 = n.parse().map_err(|_| bad())?;
        let d: u32 = d.parse().map_err(|_| bad())?;
        Self::from_parts(n, d).ok_or(ScoreError::InvalidSignature {
            numerator: n,
            denominator: d,
        })
    }
}

/// Global tempo, quantized to four categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TempoClass {
    Bpm40,
    Bpm80,
    Bpm120,
    Bpm160,
}

impl TempoClass {
    pub const ALL: [TempoClass; 4] = [
        TempoClass::Bpm40,
        TempoClass::Bpm80,
        TempoClass::Bpm120,
        TempoClass::Bpm160,
    ];

    pub fn bpm(self) -> u32 {
        match self {
            TempoClass::Bpm40 => 40,
            TempoClass::Bpm80 => 80,
            TempoClass::Bpm120 => 120,
            TempoClass::Bpm160 => 160,
        }
    }

    pub fn from_bpm_exact(bpm: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.bpm() == bpm)
    }

    pub fn micros_per_quarter(self) -> u32 {
        60_000_000 / self.bpm()
    }

    /// Wall-clock length of one quarter note.
    pub fn seconds_per_quarter(self) -> f64 {
        60.0 / f64::from(self.bpm())
    }
}

/// Maps a tempo to the nearest class. Midpoints go to the faster class and
/// values outside [40, 160] clamp to the end classes.
pub fn quantize_tempo(bpm: f64) -> TempoClass {
    if bpm.is_nan() {
        return TempoClass::Bpm40;
    }
    let mut best = TempoClass::Bpm40;
    let mut best_dist = f64::INFINITY;
    for class in TempoClass::ALL {
        let dist = (bpm - f64::from(class.bpm())).abs();
        // `<=` so that a tie resolves to the later, faster class.
        if dist <= best_dist {
            best = class;
            best_dist = dist;
        }
    }
    best
}

/// Converts an arbitrary source signature into the sequence of supported bar
/// signatures that replaces each source bar.
pub fn quantize_time_signature(numerator: u32, denominator: u32) -> Result<Vec<TimeSignature>, ScoreError> {
    if numerator < 1 || denominator == 0 || !denominator.is_power_of_two() {
        return Err(ScoreError::InvalidSignature {
            numerator,
            denominator,
        });
    }
    use TimeSignature::*;
    let bars = match (numerator, denominator) {
        (5, 4) => vec![TwoFour, ThreeFour],
        (6, 4) => vec![ThreeFour, ThreeFour],
        (4, 8) => vec![TwoFour],
        (12, 8) => vec![SixEight, SixEight],
        (n, d) => match TimeSignature::from_parts(n, d) {
            Some(ts) => vec![ts],
            None => vec![FourFour],
        },
    };
    Ok(bars)
}

/// Style label carried as the first token of every sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum Composer {
    /// No style condition; written as `None` in token text.
    #[default]
    Unspecified,
    Bach,
    Mozart,
    Beethoven,
    Chopin,
}

impl Composer {
    pub const ALL: [Composer; 5] = [
        Composer::Unspecified,
        Composer::Bach,
        Composer::Mozart,
        Composer::Beethoven,
        Composer::Chopin,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Composer::Unspecified => "None",
            Composer::Bach => "Bach",
            Composer::Mozart => "Mozart",
            Composer::Beethoven => "Beethoven",
            Composer::Chopin => "Chopin",
        }
    }

    pub fn is_specified(self) -> bool {
        self != Composer::Unspecified
    }
}

impl fmt::Display for Composer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown composer `{0}` (expected one of none, bach, mozart, beethoven, chopin)")]
pub struct UnknownComposer(pub String);

impl FromStr for Composer {
    type Err = UnknownComposer;

    /// Case-insensitive. The empty string is not accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownComposer(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Note {
    pub pitch: u8,
    pub onset: u32,
    pub duration: u32,
}

impl Note {
    pub fn new(pitch: u8, onset: u32, duration: u32) -> Self {
        Note {
            pitch,
            onset,
            duration,
        }
    }

    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarRecord {
    pub index: usize,
    pub time_signature: TimeSignature,
    pub start_tick: u32,
    pub grid_size: u32,
}

impl BarRecord {
    pub fn end_tick(&self) -> u32 {
        self.start_tick + self.time_signature.bar_ticks()
    }

    pub fn contains(&self, tick: u32) -> bool {
        tick >= self.start_tick && tick < self.end_tick()
    }
}

/// Whether a score begins and ends where the original piece does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completeness {
    pub has_true_start: bool,
    pub has_true_end: bool,
}

impl Completeness {
    pub const WHOLE: Completeness = Completeness {
        has_true_start: true,
        has_true_end: true,
    };
    pub const MIDDLE: Completeness = Completeness {
        has_true_start: false,
        has_true_end: false,
    };
}

impl Default for Completeness {
    fn default() -> Self {
        Completeness::WHOLE
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub ticks_per_quarter: u32,
    pub tempo_class: TempoClass,
    pub bars: Vec<BarRecord>,
    pub notes: Vec<Note>,
    pub composer: Composer,
    pub completeness: Completeness,
}

/// Lays out contiguous bars starting at tick 0.
pub fn layout_bars(signatures: &[TimeSignature]) -> Vec<BarRecord> {
    let mut start = 0;
    signatures
        .iter()
        .enumerate()
        .map(|(index, &time_signature)| {
            let bar = BarRecord {
                index,
                time_signature,
                start_tick: start,
                grid_size: time_signature.grid_size(),
            };
            start += time_signature.bar_ticks();
            bar
        })
        .collect()
}

impl Score {
    /// Builds a score from a bar signature list, sorting the notes.
    pub fn new(
        tempo_class: TempoClass,
        signatures: &[TimeSignature],
        mut notes: Vec<Note>,
        composer: Composer,
        completeness: Completeness,
    ) -> Self {
        notes.sort_by_key(|n| (n.onset, n.pitch));
        Score {
            ticks_per_quarter: TICKS_PER_QUARTER,
            tempo_class,
            bars: layout_bars(signatures),
            notes,
            composer,
            completeness,
        }
    }

    pub fn signatures(&self) -> Vec<TimeSignature> {
        self.bars.iter().map(|b| b.time_signature).collect()
    }

    /// Tick at which the last bar ends.
    pub fn end_tick(&self) -> u32 {
        self.bars.last().map_or(0, BarRecord::end_tick)
    }

    /// Index of the bar containing `tick`, if any.
    pub fn bar_at(&self, tick: u32) -> Option<usize> {
        let idx = self.bars.partition_point(|b| b.start_tick <= tick);
        if idx == 0 {
            return None;
        }
        let bar = &self.bars[idx - 1];
        bar.contains(tick).then_some(idx - 1)
    }

    /// Checks every structural invariant. An empty note list is accepted
    /// here; operations that need notes reject it themselves.
    pub fn validate(&self) -> Result<(), ScoreError> {
        let fail = |msg: String| Err(ScoreError::InvariantViolation(msg));
        if self.ticks_per_quarter != TICKS_PER_QUARTER {
            return fail(format!("ticks_per_quarter is {}, expected {TICKS_PER_QUARTER}", self.ticks_per_quarter));
        }
        if self.bars.is_empty() {
            return fail("score has no bars".into());
        }
        let mut expected_start = 0;
        for (i, bar) in self.bars.iter().enumerate() {
            if bar.index != i {
                return fail(format!("bar {i} carries index {}", bar.index));
            }
            if bar.start_tick != expected_start {
                return fail(format!("bar {i} starts at {}, expected {expected_start}", bar.start_tick));
            }
            if bar.grid_size != bar.time_signature.grid_size() {
                return fail(format!("bar {i} grid size {} does not match {}", bar.grid_size, bar.time_signature));
            }
            expected_start = bar.end_tick();
        }
        for (i, note) in self.notes.iter().enumerate() {
            if !(MIN_PITCH..=MAX_PITCH).contains(&note.pitch) {
                return fail(format!("note {i} pitch {} outside piano range", note.pitch));
            }
            if note.duration == 0 {
                return fail(format!("note {i} has zero duration"));
            }
            if self.bar_at(note.onset).is_none() {
                return fail(format!("note {i} onset {} lies outside every bar", note.onset));
            }
            if i > 0 {
                let prev = &self.notes[i - 1];
                if (prev.onset, prev.pitch) >= (note.onset, note.pitch) {
                    return fail(format!("notes {} and {i} are not strictly sorted by (onset, pitch)", i - 1));
                }
            }
        }
        Ok(())
    }

    /// Shifts every pitch by `semitones`; `None` if any pitch would leave the
    /// piano range.
    pub fn transpose(&self, semitones: i32) -> Option<Score> {
        let mut out = self.clone();
        for note in &mut out.notes {
            let p = i32::from(note.pitch) + semitones;
            if !(i32::from(MIN_PITCH)..=i32::from(MAX_PITCH)).contains(&p) {
                return None;
            }
            note.pitch = p as u8;
        }
        Some(out)
    }

    /// Range of shifts that keep every pitch on the keyboard.
    pub fn legal_shift_range(&self) -> (i32, i32) {
        let lo = self.notes.iter().map(|n| n.pitch).min();
        let hi = self.notes.iter().map(|n| n.pitch).max();
        match (lo, hi) {
            (Some(lo), Some(hi)) => (
                i32::from(MIN_PITCH) - i32::from(lo),
                i32::from(MAX_PITCH) - i32::from(hi),
            ),
            _ => (i32::MIN, i32::MAX),
        }
    }
}
