//! Objective quality metrics: pitch-class entropy, grooving pattern
//! similarity and structureness indicators over a fitness scape plot.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{Note, Score, TICKS_PER_QUARTER};

pub const GROOVE_SLOTS: usize = 64;

/// Cosine similarity below this maps to zero in the enhanced
/// self-similarity matrix; `[SIM_FLOOR, 1]` is stretched onto `[0, 1]`.
pub const SIM_FLOOR: f64 = 0.7;
/// Minimum mean diagonal similarity for a position to count as a repetition.
pub const MATCH_THRESHOLD: f64 = 0.5;

/// Time scales in seconds reported by [`quality_report`].
pub const SHORT_SECONDS: f64 = 3.0;
pub const MID_SECONDS: f64 = 6.0;
pub const LONG_SECONDS: f64 = 9.0;

const DURATION_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("score has no notes")]
    NoNotes,
    #[error("metric needs at least {needed} bars, score has {found}")]
    TooFewBars { needed: usize, found: usize },
    #[error("invalid interval [{l}, {u}]")]
    InvalidInterval { l: f64, u: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchClassHistogram(pub [f64; 12]);

impl PitchClassHistogram {
    /// One count per note, normalized to sum to one.
    pub fn from_notes(notes: &[Note]) -> Result<Self, MetricsError> {
        if notes.is_empty() {
            return Err(MetricsError::NoNotes);
        }
        let mut h = [0.0; 12];
        for n in notes {
            h[usize::from(n.pitch % 12)] += 1.0;
        }
        let total = notes.len() as f64;
        h.iter_mut().for_each(|v| *v /= total);
        Ok(PitchClassHistogram(h))
    }

    /// Shannon entropy in bits.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>()
    }
}

pub fn pitch_class_entropy(score: &Score) -> Result<f64, MetricsError> {
    Ok(PitchClassHistogram::from_notes(&score.notes)?.entropy())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrooveVector(#[serde(with = "groove_serde")] pub [bool; GROOVE_SLOTS]);

mod groove_serde {
    use super::GROOVE_SLOTS;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[bool; GROOVE_SLOTS], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[bool; GROOVE_SLOTS], D::Error> {
        let v: Vec<bool> = Vec::deserialize(d)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("groove vector must have 64 entries"))
    }
}

/// One onset vector per bar. A bar's grid is scaled proportionally onto the
/// 64 slots regardless of its signature.
pub fn groove_vectors(score: &Score) -> Vec<GrooveVector> {
    let mut out = vec![GrooveVector([false; GROOVE_SLOTS]); score.bars.len()];
    for note in &score.notes {
        if let Some(b) = score.bar_at(note.onset) {
            let bar = &score.bars[b];
            let pos = (note.onset - bar.start_tick) as usize;
            out[b].0[pos * GROOVE_SLOTS / bar.grid_size as usize] = true;
        }
    }
    out
}

pub fn groove_similarity(a: &GrooveVector, b: &GrooveVector) -> f64 {
    let diff = a.0.iter().zip(&b.0).filter(|(x, y)| x != y).count();
    1.0 - diff as f64 / GROOVE_SLOTS as f64
}

/// Mean similarity over all unordered bar pairs.
pub fn mean_groove_similarity(score: &Score) -> Result<f64, MetricsError> {
    let grooves = groove_vectors(score);
    if grooves.len() < 2 {
        return Err(MetricsError::TooFewBars {
            needed: 2,
            found: grooves.len(),
        });
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..grooves.len() {
        for j in i + 1..grooves.len() {
            sum += groove_similarity(&grooves[i], &grooves[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Duration-weighted 12-bin chroma, one frame per quarter note.
pub fn chroma_frames(score: &Score) -> Vec<[f64; 12]> {
    let frame = TICKS_PER_QUARTER;
    let n_frames = score.end_tick().div_ceil(frame) as usize;
    let mut frames = vec![[0.0; 12]; n_frames];
    for note in &score.notes {
        let (start, end) = (note.onset, note.end());
        let first = (start / frame) as usize;
        let last = ((end - 1) / frame) as usize;
        for (f, chroma) in frames.iter_mut().enumerate().take(last + 1).skip(first) {
            let lo = start.max(f as u32 * frame);
            let hi = end.min((f as u32 + 1) * frame);
            chroma[usize::from(note.pitch % 12)] += f64::from(hi - lo);
        }
    }
    frames
}

/// Cosine similarity stretched so that values below [`SIM_FLOOR`] vanish.
/// Two silent frames are identical; silence against sound is dissimilar.
pub fn frame_similarity(a: &[f64; 12], b: &[f64; 12]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = match (na > 0.0, nb > 0.0) {
        (false, false) => 1.0,
        (true, true) => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb),
        _ => 0.0,
    };
    ((cos - SIM_FLOOR) / (1.0 - SIM_FLOOR)).clamp(0.0, 1.0)
}

pub fn self_similarity(frames: &[[f64; 12]]) -> Vec<Vec<f64>> {
    frames
        .iter()
        .map(|a| frames.iter().map(|b| frame_similarity(a, b)).collect())
        .collect()
}

/// Fitness of every segment, indexed by length and start frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScapePlot {
    pub n_frames: usize,
    pub frame_duration_seconds: f64,
    /// `fitness[n - 1][start]` for segment length `n`; row `n - 1` has
    /// `n_frames - n + 1` entries.
    pub fitness: Vec<Vec<f64>>,
}

impl ScapePlot {
    pub fn get(&self, length: usize, start: usize) -> Option<f64> {
        self.fitness.get(length.checked_sub(1)?)?.get(start).copied()
    }

    /// Lookup by segment centre (in frames, may be fractional by one half).
    pub fn at_center(&self, length: usize, center: f64) -> Option<f64> {
        let start = center - (length as f64 - 1.0) / 2.0;
        if start < 0.0 || start.fract() != 0.0 {
            return None;
        }
        self.get(length, start as usize)
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_frames as f64 * self.frame_duration_seconds
    }
}

/// Segment fitness from an enhanced self-similarity matrix.
///
/// For segment `[start, start + len)` every non-overlapping position is
/// scored by its mean diagonal similarity. Positions scoring at least
/// [`MATCH_THRESHOLD`] are taken greedily (best first, earliest on ties)
/// while they overlap neither the segment nor each other. The fitness is the
/// harmonic mean of the mean score of those matches and the fraction of
/// frames covered by the segment plus its matches. No match means zero.
fn segment_fitness(diag_prefix: &[Vec<f64>], n_frames: usize, start: usize, len: usize) -> f64 {
    let diag_mean = |p: usize| {
        // prefix[i][j] holds the sum of sim(i - k, j - k) along the diagonal.
        let d = (diag_prefix[start + len][p + len] - diag_prefix[start][p]) / len as f64;
        // Clamped similarities are often exactly 0 or 1, so means land on the
        // threshold or tie exactly; snap away the cancellation error so those
        // comparisons go the way exact arithmetic would.
        (d * 1e12).round() / 1e12
    };
    let mut candidates: Vec<(f64, usize)> = (0..=n_frames - len)
        .filter(|&p| p + len <= start || p >= start + len)
        .map(|p| (diag_mean(p), p))
        .filter(|&(d, _)| d >= MATCH_THRESHOLD)
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut taken: Vec<usize> = Vec::new();
    let mut score_sum = 0.0;
    for (d, p) in candidates {
        if taken.iter().all(|&q| p + len <= q || p >= q + len) {
            taken.push(p);
            score_sum += d;
        }
    }
    if taken.is_empty() {
        return 0.0;
    }
    let score = score_sum / taken.len() as f64;
    let coverage = ((taken.len() + 1) * len) as f64 / n_frames as f64;
    (2.0 * score * coverage / (score + coverage)).clamp(0.0, 1.0)
}

/// Scape plot over quarter-note chroma frames.
pub fn scape_plot_from_frames(frames: &[[f64; 12]], frame_duration_seconds: f64) -> ScapePlot {
    let n = frames.len();
    let ssm = self_similarity(frames);
    let mut prefix = vec![vec![0.0; n + 1]; n + 1];
    for i in 1..=n {
        for j in 1..=n {
            prefix[i][j] = prefix[i - 1][j - 1] + ssm[i - 1][j - 1];
        }
    }
    let fitness = (1..=n)
        .map(|len| {
            (0..=n - len)
                .map(|start| segment_fitness(&prefix, n, start, len))
                .collect()
        })
        .collect();
    ScapePlot {
        n_frames: n,
        frame_duration_seconds,
        fitness,
    }
}

pub fn compute_scape_plot(score: &Score) -> Result<ScapePlot, MetricsError> {
    if score.bars.len() < 4 {
        return Err(MetricsError::TooFewBars {
            needed: 4,
            found: score.bars.len(),
        });
    }
    Ok(scape_plot_from_frames(
        &chroma_frames(score),
        score.tempo_class.seconds_per_quarter(),
    ))
}

/// Largest fitness among segments lasting between `l` and `u` seconds.
pub fn structureness(scape: &ScapePlot, l: f64, u: f64) -> Result<f64, MetricsError> {
    if !(l > 0.0 && l <= u) {
        return Err(MetricsError::InvalidInterval { l, u });
    }
    let mut best = 0.0f64;
    for (row, values) in scape.fitness.iter().enumerate() {
        let seconds = (row + 1) as f64 * scape.frame_duration_seconds;
        if seconds + DURATION_EPS < l || seconds - DURATION_EPS > u {
            continue;
        }
        best = values.iter().copied().fold(best, f64::max);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    #[serde(rename = "H")]
    pub entropy: f64,
    #[serde(rename = "GS")]
    pub groove_similarity: f64,
    #[serde(rename = "SI_short")]
    pub si_short: f64,
    #[serde(rename = "SI_mid")]
    pub si_mid: f64,
    #[serde(rename = "SI_long")]
    pub si_long: f64,
}

/// All three metrics over a whole piece. Structureness uses intervals
/// `[scale, piece length]` for the short, mid and long scales.
pub fn quality_report(score: &Score) -> Result<QualityReport, MetricsError> {
    let scape = compute_scape_plot(score)?;
    let piece = scape.duration_seconds();
    let si = |l: f64| {
        if l > piece {
            Ok(0.0)
        } else {
            structureness(&scape, l, piece)
        }
    };
    Ok(QualityReport {
        entropy: pitch_class_entropy(score)?,
        groove_similarity: mean_groove_similarity(score)?,
        si_short: si(SHORT_SECONDS)?,
        si_mid: si(MID_SECONDS)?,
        si_long: si(LONG_SECONDS)?,
    })
}
