//! Corpus preparation: overlong-note repair, bar-aligned segmentation,
//! pitch augmentation and category-balanced batch sampling.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::midi::{parse_midi, MidiError};
use crate::remi::{clamp_duration, decode, encode, encode_bars, EncodedScore, Token, TokenizeError, Vocabulary};
use crate::score::{Completeness, Composer, Score, MAX_PITCH, MIN_PITCH};

/// Largest transposition used for augmentation, in semitones.
pub const MAX_AUGMENT_SHIFT: i32 = 3;

const INDEX_MAGIC: &[u8; 8] = b"RFINDEX\0";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Midi { path: String, source: MidiError },
    #[error("{path}: {source}")]
    Tokenize { path: String, source: TokenizeError },
    #[error("no entries available for the {0:?} stage")]
    EmptyCategory(Stage),
    #[error("score too small: no bar fits within a context of {context_length} tokens")]
    ScoreTooSmall { context_length: usize },
    #[error("index file: {0}")]
    IndexFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Broad corpus, composer forced to `None`, balanced over genre labels.
    Pretrain,
    /// Composer-labelled pieces, balanced over composers.
    Finetune,
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub path: String,
    pub category: String,
    pub composer: Composer,
    pub bar_count: usize,
    pub score: Score,
    pub encoded: EncodedScore,
}

impl CorpusEntry {
    /// Normalizes `score` to its tokenizable form and attaches the label.
    pub fn new(path: impl Into<String>, category: impl Into<String>, composer: Composer, score: Score) -> Result<Self, CorpusError> {
        let path = path.into();
        let mut score = score;
        score.composer = composer;
        let tokenize = |e| CorpusError::Tokenize {
            path: path.clone(),
            source: e,
        };
        let score = decode(&encode(&score).map_err(tokenize)?).map_err(tokenize)?;
        let encoded = encode_bars(&score).map_err(tokenize)?;
        Ok(CorpusEntry {
            category: category.into(),
            composer,
            bar_count: score.bars.len(),
            score,
            encoded,
            path,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusIndex {
    pub entries: Vec<CorpusEntry>,
}

impl CorpusIndex {
    /// Entries are kept sorted by path so that sampling is reproducible
    /// regardless of input order.
    pub fn from_entries(mut entries: Vec<CorpusEntry>) -> Self {
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        CorpusIndex { entries }
    }

    /// Category label → entry indices for a training stage. Pretraining uses
    /// the genre label of entries without a composer; fine-tuning groups
    /// composer-labelled entries by composer.
    pub fn categories(&self, stage: Stage) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            match stage {
                Stage::Pretrain if !e.composer.is_specified() => out.entry(e.category.clone()).or_default().push(i),
                Stage::Finetune if e.composer.is_specified() => {
                    out.entry(e.composer.name().to_string()).or_default().push(i)
                }
                _ => {}
            }
        }
        out
    }

    /// Reads a `path,category,composer` manifest and parses every file.
    /// Relative paths resolve against the manifest's directory.
    pub fn from_manifest(manifest: &Path) -> Result<Self, CorpusError> {
        let base = manifest.parent().unwrap_or(Path::new("."));
        let mut reader = csv::Reader::from_path(manifest).map_err(|e| CorpusError::Manifest(e.to_string()))?;
        let headers = reader.headers().map_err(|e| CorpusError::Manifest(e.to_string()))?.clone();
        let expected = ["path", "category", "composer"];
        if headers.iter().map(str::trim).collect::<Vec<_>>() != expected {
            return Err(CorpusError::Manifest(format!(
                "expected header `path,category,composer`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for (line, row) in reader.records().enumerate() {
            let row = row.map_err(|e| CorpusError::Manifest(e.to_string()))?;
            let rel = row[0].trim();
            let category = row[1].trim();
            let composer = match row[2].trim() {
                "" => Composer::Unspecified,
                name => name
                    .parse()
                    .map_err(|e| CorpusError::Manifest(format!("row {}: {e}", line + 2)))?,
            };
            let path = base.join(rel);
            let bytes = fs::read(&path).map_err(|source| CorpusError::Io {
                path: path.clone(),
                source,
            })?;
            let score = parse_midi(&bytes).map_err(|source| CorpusError::Midi {
                path: rel.to_string(),
                source,
            })?;
            entries.push(CorpusEntry::new(rel, category, composer, repair_overlong_notes(&score))?);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn to_bytes(&self, vocab: &Vocabulary) -> Vec<u8> {
        let mut out = INDEX_MAGIC.to_vec();
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        for e in &self.entries {
            put_str(&mut out, &e.path);
            put_str(&mut out, &e.category);
            out.push(e.composer.index() as u8);
            out.extend_from_slice(&(e.bar_count as u32).to_le_bytes());
            let tokens = e.encoded.flatten();
            out.extend_from_slice(&(tokens.len() as u32).to_le_bytes());
            for t in tokens {
                let id = vocab.id(t).expect("encoded tokens are in the vocabulary");
                out.extend_from_slice(&(id as u16).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], vocab: &Vocabulary) -> Result<Self, CorpusError> {
        let bad = |m: &str| CorpusError::IndexFormat(m.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], CorpusError> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(8)? != INDEX_MAGIC {
            return Err(bad("bad magic header"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes([s[0], s[1], s[2], s[3]]);
        let version = u32_at(take(4)?);
        if version != INDEX_VERSION {
            return Err(CorpusError::IndexFormat(format!("unsupported version {version}")));
        }
        let count = u32_at(take(4)?) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u32_at(take(4)?) as usize;
            let path = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("path is not utf-8"))?;
            let len = u32_at(take(4)?) as usize;
            let category = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("category is not utf-8"))?;
            let composer = Composer::from_index(take(1)?[0] as usize).ok_or_else(|| bad("bad composer"))?;
            let bar_count = u32_at(take(4)?) as usize;
            let n = u32_at(take(4)?) as usize;
            let raw = take(2 * n)?;
            let tokens = raw
                .chunks_exact(2)
                .map(|c| vocab.token(u32::from(u16::from_le_bytes([c[0], c[1]]))))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CorpusError::IndexFormat(e.to_string()))?;
            let score = decode(&tokens).map_err(|e| CorpusError::IndexFormat(e.to_string()))?;
            let entry = CorpusEntry::new(path, category, composer, score)?;
            if entry.bar_count != bar_count {
                return Err(bad("bar count mismatch"));
            }
            entries.push(entry);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(CorpusIndex { entries })
    }
}

/// Clips every note longer than its containing bar to exactly one bar.
pub fn repair_overlong_notes(score: &Score) -> Score {
    let mut out = score.clone();
    for note in &mut out.notes {
        let Some(bar) = score.bar_at(note.onset) else {
            continue;
        };
        let bar_ticks = score.bars[bar].time_signature.bar_ticks();
        if note.duration > bar_ticks {
            note.duration = clamp_duration(bar_ticks);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSource {
    pub file: String,
    pub start_bar: usize,
    /// Exclusive.
    pub end_bar: usize,
}

/// A fixed-length, right-padded training window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub ids: Vec<u32>,
    pub attention_length: usize,
    pub source: SegmentSource,
}

impl Segment {
    pub fn content(&self) -> &[u32] {
        &self.ids[..self.attention_length]
    }
}

/// Takes the longest whole-bar run from a uniformly chosen feasible start bar
/// that fits in `context_length` together with the composer/tempo prefix.
pub fn segment<R: Rng + ?Sized>(
    encoded: &EncodedScore,
    file: &str,
    context_length: usize,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<Segment, CorpusError> {
    let budget = context_length.saturating_sub(2);
    let n = encoded.bars.len();
    let bos = |start: usize| usize::from(start == 0 && encoded.completeness.has_true_start);

    // For each start bar, the exclusive end of the longest run that fits.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for start in 0..n {
        let mut used = bos(start);
        let mut end = start;
        while end < n && used + encoded.bars[end].len() <= budget {
            used += encoded.bars[end].len();
            end += 1;
        }
        if end > start {
            runs.push((start, end));
        }
    }
    if runs.is_empty() {
        return Err(CorpusError::ScoreTooSmall { context_length });
    }
    let (start, end) = runs[rng.gen_range(0..runs.len())];
    let used: usize = bos(start) + encoded.bars[start..end].iter().map(Vec::len).sum::<usize>();
    let completeness = Completeness {
        has_true_start: bos(start) == 1,
        has_true_end: end == n && encoded.completeness.has_true_end && used < budget,
    };
    let tokens = encoded.assemble(start..end, completeness);
    let attention_length = tokens.len();
    let mut ids: Vec<u32> = tokens
        .iter()
        .map(|&t| vocab.id(t).expect("encoded tokens are in the vocabulary"))
        .collect();
    ids.resize(context_length, vocab.pad_id());
    Ok(Segment {
        ids,
        attention_length,
        source: SegmentSource {
            file: file.to_string(),
            start_bar: start,
            end_bar: end,
        },
    })
}

/// Clamps a requested shift toward zero until it fits `[lo, hi]`.
pub fn effective_shift(requested: i32, lo: i32, hi: i32) -> i32 {
    requested.min(hi.max(0)).max(lo.min(0))
}

fn token_pitch_bounds(tokens: impl Iterator<Item = Token>) -> (i32, i32) {
    let mut lo = i32::MAX;
    let mut hi = i32::MIN;
    for t in tokens {
        if let Token::NotePitch(p) = t {
            lo = lo.min(i32::from(p));
            hi = hi.max(i32::from(p));
        }
    }
    if lo > hi {
        return (i32::MIN / 2, i32::MAX / 2);
    }
    (i32::from(MIN_PITCH) - lo, i32::from(MAX_PITCH) - hi)
}

/// Transposes a score, shrinking the shift toward zero if needed. Returns the
/// result and the shift actually applied.
pub fn augment_score(score: &Score, shift: i32) -> (Score, i32) {
    let (lo, hi) = score.legal_shift_range();
    let eff = effective_shift(shift, lo, hi);
    (score.transpose(eff).expect("shift within legal range"), eff)
}

/// Transposes every `NotePitch` in place.
pub fn augment_tokens(tokens: &mut [Token], shift: i32) -> i32 {
    let (lo, hi) = token_pitch_bounds(tokens.iter().copied());
    let eff = effective_shift(shift, lo, hi);
    for t in tokens.iter_mut() {
        if let Token::NotePitch(p) = t {
            *p = (i32::from(*p) + eff) as u8;
        }
    }
    eff
}

/// Legal shift range of a segment's content, intersected with ±3.
pub fn segment_shift_range(segment: &Segment, vocab: &Vocabulary) -> (i32, i32) {
    let tokens = segment.content().iter().filter_map(|&id| vocab.token(id).ok());
    let (lo, hi) = token_pitch_bounds(tokens);
    (lo.max(-MAX_AUGMENT_SHIFT).min(0), hi.min(MAX_AUGMENT_SHIFT).max(0))
}

pub fn augment_segment(segment: &Segment, shift: i32, vocab: &Vocabulary) -> (Segment, i32) {
    let mut tokens: Vec<Token> = segment
        .content()
        .iter()
        .map(|&id| vocab.token(id).expect("segment ids are in the vocabulary"))
        .collect();
    let eff = augment_tokens(&mut tokens, shift);
    let mut out = segment.clone();
    for (slot, t) in out.ids.iter_mut().zip(tokens) {
        *slot = vocab.id(t).expect("transposed pitch stays in range");
    }
    (out, eff)
}

/// Picks a category uniformly, then an entry uniformly within it.
pub fn draw_entry<R: Rng + ?Sized>(
    categories: &BTreeMap<String, Vec<usize>>,
    rng: &mut R,
) -> Option<(usize, usize)> {
    if categories.is_empty() {
        return None;
    }
    let cat = rng.gen_range(0..categories.len());
    let members = categories.values().nth(cat)?;
    if members.is_empty() {
        return None;
    }
    Some((cat, members[rng.gen_range(0..members.len())]))
}

pub fn sample_batch<R: Rng + ?Sized>(
    index: &CorpusIndex,
    batch_size: usize,
    context_length: usize,
    stage: Stage,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<Vec<Segment>, CorpusError> {
    let categories = index.categories(stage);
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (_, entry_idx) = draw_entry(&categories, rng).ok_or(CorpusError::EmptyCategory(stage))?;
        let entry = &index.entries[entry_idx];
        let seg = segment(&entry.encoded, &entry.path, context_length, vocab, rng)?;
        let (lo, hi) = segment_shift_range(&seg, vocab);
        let (mut seg, _) = augment_segment(&seg, rng.gen_range(lo..=hi), vocab);
        let composer = match stage {
            Stage::Pretrain => Composer::Unspecified,
            Stage::Finetune => entry.composer,
        };
        seg.ids[0] = vocab.id(Token::Composer(composer)).expect("composer token");
        batch.push(seg);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{random_score, ScoreShape};
    use crate::remi::from_ids;
    use crate::score::{Note, TempoClass, TimeSignature};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bars_score(n_bars: usize) -> Score {
        let notes = (0..n_bars as u32).map(|b| Note::new(60 + (b % 12) as u8, b * 48, 12)).collect();
        Score::new(
            TempoClass::Bpm120,
            &vec![TimeSignature::FourFour; n_bars],
            notes,
            Composer::Unspecified,
            Completeness::WHOLE,
        )
    }

    #[test]
    fn repair_examples() {
        use TimeSignature::*;
        let s = Score::new(
            TempoClass::Bpm120,
            &[FourFour, ThreeEight],
            vec![Note::new(60, 0, 96), Note::new(62, 0, 12), Note::new(64, 48, 40)],
            Composer::Unspecified,
            Completeness::WHOLE,
        );
        let r = repair_overlong_notes(&s);
        let durations: Vec<u32> = r.notes.iter().map(|n| n.duration).collect();
        assert_eq!(durations, vec![48, 12, 18]);
    }

    #[test]
    fn whole_piece_fits() {
        let vocab = Vocabulary::new();
        let enc = encode_bars(&bars_score(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seg = segment(&enc, "x", 2400, &vocab, &mut rng).unwrap();
        assert_eq!(seg.attention_length, enc.flatten().len());
        assert_eq!(seg.ids.len(), 2400);
        assert!(seg.ids[seg.attention_length..].iter().all(|&i| i == 0));
        assert_eq!(from_ids(seg.content(), &vocab).unwrap(), enc.flatten());
    }

    #[test]
    fn too_small_context() {
        let vocab = Vocabulary::new();
        let enc = encode_bars(&bars_score(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // bar = Bar TimeSig Beat Pitch Duration = 5 tokens, plus BOS.
        assert!(matches!(
            segment(&enc, "x", 7, &vocab, &mut rng),
            Err(CorpusError::ScoreTooSmall { .. })
        ));
        assert!(segment(&enc, "x", 8, &vocab, &mut rng).is_ok());
    }

    #[test]
    fn segments_are_deterministic_and_bar_aligned() {
        let vocab = Vocabulary::new();
        let enc = encode_bars(&bars_score(10)).unwrap();
        let a = segment(&enc, "x", 20, &vocab, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = segment(&enc, "x", 20, &vocab, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let tokens = from_ids(a.content(), &vocab).unwrap();
        assert_eq!(tokens.len(), a.attention_length);
        assert!(tokens.len() <= 20);
        let decoded = decode(&tokens).unwrap();
        assert_eq!(decoded.bars.len(), a.source.end_bar - a.source.start_bar);
        assert_eq!(decoded.completeness.has_true_start, a.source.start_bar == 0);
    }

    #[test]
    fn augmentation_examples() {
        let mut t = vec![Token::NotePitch(60)];
        assert_eq!(augment_tokens(&mut t, 3), 3);
        assert_eq!(t, vec![Token::NotePitch(63)]);
        let mut t = vec![Token::NotePitch(107), Token::NotePitch(60)];
        assert_eq!(augment_tokens(&mut t, 3), 1);
        assert_eq!(t[0], Token::NotePitch(108));
        let mut t = vec![Token::NotePitch(22)];
        assert_eq!(augment_tokens(&mut t, -3), -1);
        let mut t = vec![Token::NotePitch(50), Token::Bar];
        assert_eq!(augment_tokens(&mut t, 0), 0);
        assert_eq!(t, vec![Token::NotePitch(50), Token::Bar]);
    }

    fn labelled_index() -> CorpusIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = ScoreShape {
            max_bars: 6,
            ..ScoreShape::default()
        };
        let mut entries = Vec::new();
        for (i, (cat, composer)) in [
            ("pop", Composer::Unspecified),
            ("folk", Composer::Unspecified),
            ("classical", Composer::Unspecified),
            ("classical", Composer::Bach),
            ("classical", Composer::Chopin),
        ]
        .into_iter()
        .enumerate()
        {
            for j in 0..3 {
                let s = random_score(&mut rng, &shape);
                entries.push(CorpusEntry::new(format!("{i}-{j}.mid"), cat, composer, s).unwrap());
            }
        }
        CorpusIndex::from_entries(entries)
    }

    #[test]
    fn stage_composer_forcing() {
        let vocab = Vocabulary::new();
        let index = labelled_index();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let none = vocab.id(Token::Composer(Composer::Unspecified)).unwrap();
        for seg in sample_batch(&index, 32, 512, Stage::Pretrain, &vocab, &mut rng).unwrap() {
            assert_eq!(seg.ids[0], none);
        }
        let bach = vocab.id(Token::Composer(Composer::Bach)).unwrap();
        let chopin = vocab.id(Token::Composer(Composer::Chopin)).unwrap();
        for seg in sample_batch(&index, 32, 512, Stage::Finetune, &vocab, &mut rng).unwrap() {
            assert!(seg.ids[0] == bach || seg.ids[0] == chopin);
            let tokens = from_ids(seg.content(), &vocab).unwrap();
            decode(&tokens).unwrap();
        }
        let only_bach = CorpusIndex::from_entries(
            index.entries.iter().filter(|e| e.composer == Composer::Bach).cloned().collect(),
        );
        for seg in sample_batch(&only_bach, 8, 512, Stage::Finetune, &vocab, &mut rng).unwrap() {
            assert_eq!(seg.ids[0], bach);
        }
        assert!(matches!(
            sample_batch(&only_bach, 1, 512, Stage::Pretrain, &vocab, &mut rng),
            Err(CorpusError::EmptyCategory(Stage::Pretrain))
        ));
    }

    #[test]
    fn batches_reproducible() {
        let vocab = Vocabulary::new();
        let index = labelled_index();
        let a = sample_batch(&index, 16, 128, Stage::Pretrain, &vocab, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = sample_batch(&index, 16, 128, Stage::Pretrain, &vocab, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn category_balance_within_three_sigma() {
        let mut cats: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        // Deliberately unequal category sizes.
        for (name, size) in [("a", 1), ("b", 5), ("c", 20), ("d", 100)] {
            cats.insert(name.into(), (0..size).collect());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 40_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[draw_entry(&cats, &mut rng).unwrap().0] += 1;
        }
        let p = 0.25;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn index_round_trip_and_corruption() {
        let vocab = Vocabulary::new();
        let index = labelled_index();
        let bytes = index.to_bytes(&vocab);
        let back = CorpusIndex::from_bytes(&bytes, &vocab).unwrap();
        assert_eq!(back.entries.len(), index.entries.len());
        for (a, b) in back.entries.iter().zip(&index.entries) {
            assert_eq!(a.score, b.score);
            assert_eq!((&a.path, &a.category, a.composer), (&b.path, &b.category, b.composer));
        }
        assert!(CorpusIndex::from_bytes(&bytes[..bytes.len() - 1], &vocab).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(CorpusIndex::from_bytes(&bad, &vocab), Err(CorpusError::IndexFormat(_))));
    }
}
