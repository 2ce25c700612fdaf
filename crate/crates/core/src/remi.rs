//! Extended REMI token codec.
//!
//! Layout of an encoded score:
//!
//! ```text
//! Composer Tempo [BOS] { Bar TimeSig { Beat (NotePitch NoteDuration)+ }* }+ [EOS]
//! ```
//!
//! Beats within a bar are strictly ascending and each carries at least one
//! note; notes within a beat are strictly ascending in pitch. `BOS`/`EOS`
//! appear only when the sequence reaches the true start/end of the piece.
//! `Pad` is never emitted; trailing pads are ignored on decode.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::score::{
    Completeness, Composer, Note, Score, ScoreError, TempoClass, TimeSignature, MAX_PITCH, MIN_PITCH,
};

/// Largest beat grid of any supported signature (4/4).
pub const MAX_GRID: u8 = 48;
pub const DURATION_STEP: u32 = 3;
pub const MAX_DURATION: u32 = 48;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenizeError {
    #[error("score invariant violated: {0}")]
    InvariantViolation(String),
    #[error("grammar error at token {position}: {message}")]
    Grammar { position: usize, message: String },
    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(String),
    #[error("id {0} is not in the vocabulary")]
    UnknownId(u32),
}

impl From<ScoreError> for TokenizeError {
    fn from(e: ScoreError) -> Self {
        TokenizeError::InvariantViolation(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokenKind {
    Composer,
    Tempo,
    Bos,
    Eos,
    Bar,
    TimeSig,
    Beat,
    NotePitch,
    NoteDuration,
    Pad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Pad,
    Bos,
    Eos,
    Bar,
    Composer(Composer),
    Tempo(TempoClass),
    TimeSig(TimeSignature),
    /// Grid position inside the current bar.
    Beat(u8),
    NotePitch(u8),
    /// Duration in ticks, a multiple of [`DURATION_STEP`].
    NoteDuration(u8),
}

impl Token {
    pub fn kind(self) -> TokenKind {
        match self {
            Token::Pad => TokenKind::Pad,
            Token::Bos => TokenKind::Bos,
            Token::Eos => TokenKind::Eos,
            Token::Bar => TokenKind::Bar,
            Token::Composer(_) => TokenKind::Composer,
            Token::Tempo(_) => TokenKind::Tempo,
            Token::TimeSig(_) => TokenKind::TimeSig,
            Token::Beat(_) => TokenKind::Beat,
            Token::NotePitch(_) => TokenKind::NotePitch,
            Token::NoteDuration(_) => TokenKind::NoteDuration,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Pad => f.write_str("Pad"),
            Token::Bos => f.write_str("BOS"),
            Token::Eos => f.write_str("EOS"),
            Token::Bar => f.write_str("Bar"),
            Token::Composer(c) => write!(f, "Composer_{}", c.name()),
            Token::Tempo(t) => write!(f, "Tempo_{}", t.bpm()),
            Token::TimeSig(ts) => write!(f, "Time_Signature_{ts}"),
            Token::Beat(b) => write!(f, "Beat_{b}"),
            Token::NotePitch(p) => write!(f, "Note_Pitch_{p}"),
            Token::NoteDuration(d) => write!(f, "Note_Duration_{d}"),
        }
    }
}

impl FromStr for Token {
    type Err = TokenizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || TokenizeError::UnknownToken(s.to_string());
        let num = |v: &str| v.parse::<u8>().map_err(|_| unknown());
        let token = match s {
            "Pad" => Token::Pad,
            "BOS" => Token::Bos,
            "EOS" => Token::Eos,
            "Bar" => Token::Bar,
            _ => {
                if let Some(v) = s.strip_prefix("Composer_") {
                    Token::Composer(v.parse().map_err(|_| unknown())?)
                } else if let Some(v) = s.strip_prefix("Tempo_") {
                    let bpm = v.parse::<u32>().map_err(|_| unknown())?;
                    Token::Tempo(TempoClass::from_bpm_exact(bpm).ok_or_else(unknown)?)
                } else if let Some(v) = s.strip_prefix("Time_Signature_") {
                    Token::TimeSig(v.parse().map_err(|_| unknown())?)
                } else if let Some(v) = s.strip_prefix("Beat_") {
                    Token::Beat(num(v)?)
                } else if let Some(v) = s.strip_prefix("Note_Pitch_") {
                    Token::NotePitch(num(v)?)
                } else if let Some(v) = s.strip_prefix("Note_Duration_") {
                    Token::NoteDuration(num(v)?)
                } else {
                    return Err(unknown());
                }
            }
        };
        Ok(token)
    }
}

/// Every duration value with its own token: 3, 6, ..., 48 ticks.
pub fn legal_durations() -> impl Iterator<Item = u32> {
    (1..=MAX_DURATION / DURATION_STEP).map(|k| k * DURATION_STEP)
}

/// Nearest legal duration; ties go to the longer value.
pub fn clamp_duration(ticks: u32) -> u32 {
    if ticks >= MAX_DURATION {
        return MAX_DURATION;
    }
    let down = (ticks / DURATION_STEP) * DURATION_STEP;
    let up = down + DURATION_STEP;
    let snapped = if ticks - down < up - ticks { down } else { up };
    snapped.clamp(DURATION_STEP, MAX_DURATION)
}

/// Bijective token ↔ id table with `Pad` at id 0.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    ids: HashMap<Token, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut tokens = vec![Token::Pad, Token::Bos, Token::Eos, Token::Bar];
        tokens.extend(Composer::ALL.map(Token::Composer));
        tokens.extend(TempoClass::ALL.map(Token::Tempo));
        tokens.extend(TimeSignature::ALL.map(Token::TimeSig));
        tokens.extend((0..MAX_GRID).map(Token::Beat));
        tokens.extend((MIN_PITCH..=MAX_PITCH).map(Token::NotePitch));
        tokens.extend(legal_durations().map(|d| Token::NoteDuration(d as u8)));
        let ids = tokens.iter().enumerate().map(|(i, &t)| (t, i as u32)).collect();
        Vocabulary { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: Token) -> Result<u32, TokenizeError> {
        self.ids
            .get(&token)
            .copied()
            .ok_or_else(|| TokenizeError::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: u32) -> Result<Token, TokenizeError> {
        self.tokens
            .get(id as usize)
            .copied()
            .ok_or(TokenizeError::UnknownId(id))
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    /// `id<TAB>name` lines in id order.
    pub fn to_tsv(&self) -> String {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{i}\t{t}\n"))
            .collect()
    }
}

pub fn to_ids(tokens: &[Token], vocab: &Vocabulary) -> Result<Vec<u32>, TokenizeError> {
    tokens.iter().map(|&t| vocab.id(t)).collect()
}

pub fn from_ids(ids: &[u32], vocab: &Vocabulary) -> Result<Vec<Token>, TokenizeError> {
    ids.iter().map(|&i| vocab.token(i)).collect()
}

pub fn tokens_to_text(tokens: &[Token]) -> String {
    tokens.iter().map(|t| format!("{t}\n")).collect()
}

pub fn tokens_from_text(text: &str) -> Result<Vec<Token>, TokenizeError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::parse)
        .collect()
}

pub fn ids_to_text(ids: &[u32]) -> String {
    ids.iter().map(|i| format!("{i}\n")).collect()
}

pub fn ids_from_text(text: &str) -> Result<Vec<u32>, TokenizeError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse().map_err(|_| TokenizeError::UnknownToken(l.to_string())))
        .collect()
}

/// A score split into its global prefix and per-bar token runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedScore {
    pub composer: Composer,
    pub tempo: TempoClass,
    pub completeness: Completeness,
    /// Each entry starts with `Bar TimeSig`.
    pub bars: Vec<Vec<Token>>,
}

impl EncodedScore {
    pub fn flatten(&self) -> Vec<Token> {
        self.assemble(0..self.bars.len(), self.completeness)
    }

    /// Joins a bar range under the global prefix with the given boundary markers.
    pub fn assemble(&self, bars: std::ops::Range<usize>, completeness: Completeness) -> Vec<Token> {
        let mut out = vec![Token::Composer(self.composer), Token::Tempo(self.tempo)];
        if completeness.has_true_start {
            out.push(Token::Bos);
        }
        for bar in &self.bars[bars] {
            out.extend_from_slice(bar);
        }
        if completeness.has_true_end {
            out.push(Token::Eos);
        }
        out
    }
}

/// Encodes a score into per-bar token runs.
pub fn encode_bars(score: &Score) -> Result<EncodedScore, TokenizeError> {
    score.validate()?;
    if score.notes.is_empty() {
        return Err(TokenizeError::InvariantViolation("score has no notes".into()));
    }
    let mut bars: Vec<Vec<Token>> = score
        .bars
        .iter()
        .map(|b| vec![Token::Bar, Token::TimeSig(b.time_signature)])
        .collect();
    let mut last_beat: Option<(usize, u32)> = None;
    for note in &score.notes {
        // validate() guarantees every onset lies in a bar.
        let bar_idx = score.bar_at(note.onset).expect("validated onset");
        let beat = note.onset - score.bars[bar_idx].start_tick;
        if last_beat != Some((bar_idx, beat)) {
            bars[bar_idx].push(Token::Beat(beat as u8));
            last_beat = Some((bar_idx, beat));
        }
        bars[bar_idx].push(Token::NotePitch(note.pitch));
        bars[bar_idx].push(Token::NoteDuration(clamp_duration(note.duration) as u8));
    }
    Ok(EncodedScore {
        composer: score.composer,
        tempo: score.tempo_class,
        completeness: score.completeness,
        bars,
    })
}

pub fn encode(score: &Score) -> Result<Vec<Token>, TokenizeError> {
    Ok(encode_bars(score)?.flatten())
}

fn grammar<T>(position: usize, message: impl Into<String>) -> Result<T, TokenizeError> {
    Err(TokenizeError::Grammar {
        position,
        message: message.into(),
    })
}

/// Rebuilds a score from a token sequence, rejecting anything `encode`
/// could not have produced (apart from trailing padding).
pub fn decode(tokens: &[Token]) -> Result<Score, TokenizeError> {
    let end = tokens.iter().rposition(|&t| t != Token::Pad).map_or(0, |i| i + 1);
    let tokens = &tokens[..end];

    let composer = match tokens.first() {
        Some(Token::Composer(c)) => *c,
        _ => return grammar(0, "sequence must start with a Composer token"),
    };
    let tempo = match tokens.get(1) {
        Some(Token::Tempo(t)) => *t,
        _ => return grammar(1, "second token must be a Tempo token"),
    };
    let mut pos = 2;
    let has_true_start = tokens.get(pos) == Some(&Token::Bos);
    if has_true_start {
        pos += 1;
    }

    let mut signatures: Vec<TimeSignature> = Vec::new();
    let mut notes: Vec<Note> = Vec::new();
    let mut bar_start: u32 = 0;
    let mut bar_ticks: u32 = 0;
    // (beat, pitch of last note in it)
    let mut beat: Option<(u32, Option<u8>)> = None;
    let mut has_true_end = false;

    while pos < tokens.len() {
        let token = tokens[pos];
        if has_true_end {
            return grammar(pos, format!("{token} after EOS"));
        }
        match token {
            Token::Bar => {
                if let Some((_, None)) = beat {
                    return grammar(pos, "Beat without notes");
                }
                match tokens.get(pos + 1) {
                    Some(Token::TimeSig(ts)) => {
                        bar_start += bar_ticks;
                        bar_ticks = ts.bar_ticks();
                        signatures.push(*ts);
                        beat = None;
                        pos += 2;
                        continue;
                    }
                    _ => return grammar(pos + 1, "missing TimeSig after Bar"),
                }
            }
            Token::Beat(k) => {
                let k = u32::from(k);
                let Some(&ts) = signatures.last() else {
                    return grammar(pos, "Beat outside a bar");
                };
                if k >= ts.grid_size() {
                    return grammar(pos, format!("Beat_{k} exceeds the {ts} grid of {}", ts.grid_size()));
                }
                match beat {
                    Some((_, None)) => return grammar(pos, "Beat without notes"),
                    Some((prev, _)) if prev >= k => return grammar(pos, "beats not ascending within bar"),
                    _ => {}
                }
                beat = Some((k, None));
            }
            Token::NotePitch(p) => {
                let Some((k, last_pitch)) = beat else {
                    return grammar(pos, "NotePitch before any Beat in the bar");
                };
                if !(MIN_PITCH..=MAX_PITCH).contains(&p) {
                    return grammar(pos, format!("pitch {p} outside piano range"));
                }
                if last_pitch.is_some_and(|lp| lp >= p) {
                    return grammar(pos, "pitches not ascending within beat");
                }
                let Some(&Token::NoteDuration(d)) = tokens.get(pos + 1) else {
                    return grammar(pos + 1, "NotePitch not followed by NoteDuration");
                };
                notes.push(Note::new(p, bar_start + k, u32::from(d)));
                beat = Some((k, Some(p)));
                pos += 2;
                continue;
            }
            Token::NoteDuration(_) => return grammar(pos, "NoteDuration without preceding NotePitch"),
            Token::Eos => {
                if let Some((_, None)) = beat {
                    return grammar(pos, "Beat without notes");
                }
                has_true_end = true;
            }
            Token::TimeSig(_) => return grammar(pos, "TimeSig not preceded by Bar"),
            Token::Pad => return grammar(pos, "Pad inside the sequence"),
            Token::Composer(_) | Token::Tempo(_) | Token::Bos => {
                return grammar(pos, format!("{token} is only valid at the sequence start"))
            }
        }
        pos += 1;
    }
    if let Some((_, None)) = beat {
        return grammar(tokens.len(), "Beat without notes");
    }
    if signatures.is_empty() {
        return grammar(tokens.len(), "sequence contains no bars");
    }
    Ok(Score::new(
        tempo,
        &signatures,
        notes,
        composer,
        Completeness {
            has_true_start,
            has_true_end,
        },
    ))
}
