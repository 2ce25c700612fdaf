//! Standard MIDI File reading and writing.
//!
//! Reading accepts format 0 and 1 with metrical time division. All channels
//! and tracks are merged into a single piano stream and velocities are
//! dropped. Writing always produces a format-0 file at 480 ticks per quarter.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::score::{
    quantize_tempo, quantize_time_signature, Completeness, Composer, Note, Score, TempoClass, TimeSignature,
    MAX_PITCH, MIN_PITCH, TICKS_PER_QUARTER,
};

/// Resolution used by [`write_midi`].
pub const WRITE_TICKS_PER_QUARTER: u16 = 480;

const MARKER_PREFIX: &str = "remiforge:";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MidiError {
    #[error("malformed MIDI: {0}")]
    Malformed(String),
    #[error("MIDI file contains no notes in the piano range")]
    EmptyScore,
}

fn malformed<T>(msg: impl Into<String>) -> Result<T, MidiError> {
    Err(MidiError::Malformed(msg.into()))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Cursor { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.remaining() < n {
            return malformed(format!("unexpected end of data at byte {}", self.pos));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        Ok(self.take(1)?[0])
    }

    fn peek(&self) -> Result<u8, MidiError> {
        self.data
            .get(self.pos)
            .copied()
            .ok_or_else(|| MidiError::Malformed(format!("unexpected end of data at byte {}", self.pos)))
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32, MidiError> {
        let mut value: u32 = 0;
        for _ in 0..4 {
            let byte = self.u8()?;
            value = (value << 7) | u32::from(byte & 0x7f);
            if byte & 0x80 == 0 {
                return Ok(value);
            }
        }
        malformed("variable-length quantity longer than 4 bytes")
    }
}

#[derive(Debug, Default)]
struct RawEvents {
    division: u32,
    tempos: Vec<(u64, u32)>,
    signatures: Vec<(u64, u32, u32)>,
    /// (on tick, off tick, pitch)
    notes: Vec<(u64, u64, u8)>,
    marker: Option<String>,
}

fn read_track(track: &[u8], raw: &mut RawEvents) -> Result<(), MidiError> {
    let mut cur = Cursor::new(track);
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut open: HashMap<(u8, u8), VecDeque<u64>> = HashMap::new();

    while cur.remaining() > 0 {
        tick += u64::from(cur.vlq()?);
        let first = cur.peek()?;
        let status = if first & 0x80 != 0 {
            cur.pos += 1;
            first
        } else {
            match running {
                Some(s) => s,
                None => return malformed(format!("data byte {first:#04x} without a running status")),
            }
        };
        match status {
            0xff => {
                running = None;
                let kind = cur.u8()?;
                let len = cur.vlq()? as usize;
                let data = cur.take(len)?;
                match kind {
                    0x2f => break,
                    0x51 if len == 3 => {
                        let us = u32::from(data[0]) << 16 | u32::from(data[1]) << 8 | u32::from(data[2]);
                        raw.tempos.push((tick, us));
                    }
                    0x58 if len >= 2 => {
                        let numerator = u32::from(data[0]);
                        if data[1] > 7 {
                            return malformed(format!("time signature denominator exponent {}", data[1]));
                        }
                        raw.signatures.push((tick, numerator, 1 << data[1]));
                    }
                    0x01 => {
                        if let Ok(text) = std::str::from_utf8(data) {
                            if let Some(rest) = text.strip_prefix(MARKER_PREFIX) {
                                raw.marker = Some(rest.to_string());
                            }
                        }
                    }
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = cur.vlq()? as usize;
                cur.take(len)?;
            }
            0x80..=0xef => {
                running = Some(status);
                let kind = status & 0xf0;
                let channel = status & 0x0f;
                let n_data = if kind == 0xc0 || kind == 0xd0 { 1 } else { 2 };
                let data = cur.take(n_data)?;
                if data.iter().any(|b| b & 0x80 != 0) {
                    return malformed(format!("status byte inside channel message data at tick {tick}"));
                }
                let is_on = kind == 0x90 && data[1] > 0;
                let is_off = kind == 0x80 || (kind == 0x90 && data[1] == 0);
                if is_on {
                    open.entry((channel, data[0])).or_default().push_back(tick);
                } else if is_off {
                    if let Some(on) = open.get_mut(&(channel, data[0])).and_then(VecDeque::pop_front) {
                        raw.notes.push((on, tick, data[0]));
                    }
                }
            }
            other => return malformed(format!("unsupported status byte {other:#04x}")),
        }
    }
    // Notes still sounding at the end of the track end there.
    for ((_, pitch), ons) in open {
        for on in ons {
            raw.notes.push((on, tick, pitch));
        }
    }
    Ok(())
}

fn read_raw(bytes: &[u8]) -> Result<RawEvents, MidiError> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4).map_err(|_| MidiError::Malformed("missing MThd header".into()))? != b"MThd" {
        return malformed("missing MThd header");
    }
    let header_len = cur.u32()? as usize;
    if header_len < 6 {
        return malformed("header chunk shorter than 6 bytes");
    }
    let header = cur.take(header_len)?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let n_tracks = u16::from_be_bytes([header[2], header[3]]);
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return malformed(format!("unsupported SMF format {format}"));
    }
    if division & 0x8000 != 0 || division == 0 {
        return malformed("SMPTE or zero time division is not supported");
    }
    let mut raw = RawEvents {
        division: u32::from(division),
        ..RawEvents::default()
    };
    let mut seen = 0;
    while seen < n_tracks {
        let id = cur.take(4)?;
        let len = cur.u32()? as usize;
        let body = cur.take(len)?;
        if id == b"MTrk" {
            read_track(body, &mut raw)?;
            seen += 1;
        }
    }
    Ok(raw)
}

/// Nearest integer to `num / den` with exact halves rounding down.
fn round_half_down(num: i64, den: i64) -> i64 {
    debug_assert!(den > 0);
    // ceil((2 num - den) / (2 den))
    let a = 2 * num - den;
    let b = 2 * den;
    -((-a).div_euclid(b))
}

#[derive(Debug, Clone, Copy)]
struct SourceBar {
    start: i64,
    len: i64,
    numerator: u32,
    denominator: u32,
}

/// Piecewise-linear map from source bar time onto converted bar time.
struct BarMap {
    source: Vec<SourceBar>,
    /// Start tick and total length of each source bar's replacement bars.
    target: Vec<(i64, i64)>,
    signatures: Vec<TimeSignature>,
}

impl BarMap {
    fn new(source: Vec<SourceBar>) -> Result<Self, MidiError> {
        let mut target = Vec::with_capacity(source.len());
        let mut signatures = Vec::new();
        let mut start = 0i64;
        for bar in &source {
            let converted = quantize_time_signature(bar.numerator, bar.denominator)
                .map_err(|e| MidiError::Malformed(e.to_string()))?;
            let len: i64 = converted.iter().map(|t| i64::from(t.bar_ticks())).sum();
            target.push((start, len));
            start += len;
            signatures.extend(converted);
        }
        Ok(BarMap {
            source,
            target,
            signatures,
        })
    }

    fn bar_index(&self, tick: i64) -> usize {
        self.source.partition_point(|b| b.start <= tick).saturating_sub(1)
    }

    fn map(&self, tick: i64, bar: usize) -> i64 {
        let src = self.source[bar];
        let (t_start, t_len) = self.target[bar];
        if t_len == src.len {
            return t_start + (tick - src.start);
        }
        t_start + round_half_down((tick - src.start) * t_len, src.len)
    }

    fn map_onset(&self, tick: i64) -> i64 {
        let bar = self.bar_index(tick);
        let (t_start, t_len) = self.target[bar];
        self.map(tick, bar).min(t_start + t_len - 1)
    }

    fn map_offset(&self, tick: i64) -> i64 {
        self.map(tick, self.bar_index(tick))
    }
}

fn build_source_bars(signatures: &[(i64, u32, u32)], last_needed: i64) -> Vec<SourceBar> {
    let mut bars = Vec::new();
    let mut numerator = 4;
    let mut denominator = 4;
    let mut events = signatures.iter().peekable();
    let mut start = 0i64;
    loop {
        // A signature change takes effect at the first bar line at or after it.
        while let Some(&&(tick, n, d)) = events.peek() {
            if tick <= start {
                numerator = n;
                denominator = d;
                events.next();
            } else {
                break;
            }
        }
        let len = i64::from(numerator) * 48 / i64::from(denominator);
        let len = len.max(1);
        bars.push(SourceBar {
            start,
            len,
            numerator,
            denominator,
        });
        start += len;
        if start > last_needed && events.peek().is_none() {
            break;
        }
    }
    bars
}

fn apply_marker(marker: &str, composer: &mut Composer, completeness: &mut Completeness) {
    for field in marker.split(';') {
        match field.split_once('=') {
            Some(("composer", v)) => {
                if let Ok(c) = v.parse() {
                    *composer = c;
                }
            }
            Some(("start", v)) => completeness.has_true_start = v == "1",
            Some(("end", v)) => completeness.has_true_end = v == "1",
            _ => {}
        }
    }
}

/// Parses SMF bytes into a quantized [`Score`].
pub fn parse_midi(bytes: &[u8]) -> Result<Score, MidiError> {
    let raw = read_raw(bytes)?;
    let division = i64::from(raw.division);
    let tpq = i64::from(TICKS_PER_QUARTER);
    let quantize = |t: u64| round_half_down(t as i64 * tpq, division);

    let tempo = raw
        .tempos
        .iter()
        .min_by_key(|(tick, _)| *tick)
        .map(|&(_, us)| quantize_tempo(60_000_000.0 / f64::from(us.max(1))))
        .unwrap_or(TempoClass::Bpm120);

    let mut signatures: Vec<(i64, u32, u32)> = raw
        .signatures
        .iter()
        .map(|&(t, n, d)| (quantize(t), n, d))
        .collect();
    // Stable sort keeps file order, so the last event at a tick wins.
    signatures.sort_by_key(|s| s.0);
    if signatures.iter().any(|&(_, n, _)| n == 0) {
        return malformed("time signature with zero numerator");
    }

    let quantized: Vec<(i64, i64, u8)> = raw
        .notes
        .iter()
        .filter(|&&(_, _, p)| (MIN_PITCH..=MAX_PITCH).contains(&p))
        .map(|&(on, off, p)| (quantize(on), quantize(off), p))
        .collect();
    if quantized.is_empty() {
        return Err(MidiError::EmptyScore);
    }
    let last_onset = quantized.iter().map(|n| n.0).max().unwrap_or(0);
    let last_signature = signatures.last().map_or(0, |s| s.0);
    let source = build_source_bars(&signatures, last_onset.max(last_signature));
    let map = BarMap::new(source)?;

    let mut notes: Vec<Note> = quantized
        .iter()
        .map(|&(on, off, pitch)| {
            let onset = map.map_onset(on);
            let end = map.map_offset(off.max(on));
            Note::new(pitch, onset as u32, (end - onset).max(1) as u32)
        })
        .collect();
    notes.sort_by_key(|n| (n.onset, n.pitch, n.duration));
    let notes = merge_same_pitch(notes);

    let mut composer = Composer::Unspecified;
    let mut completeness = Completeness::WHOLE;
    if let Some(marker) = &raw.marker {
        apply_marker(marker, &mut composer, &mut completeness);
    }

    Ok(Score::new(tempo, &map.signatures, notes, composer, completeness))
}

/// Truncates the earlier of two overlapping same-pitch notes at the later
/// onset. Notes sharing onset and pitch collapse to the longest one.
fn merge_same_pitch(notes: Vec<Note>) -> Vec<Note> {
    let mut out: Vec<Note> = Vec::with_capacity(notes.len());
    let mut last_of_pitch: HashMap<u8, usize> = HashMap::new();
    for note in notes {
        if let Some(&idx) = last_of_pitch.get(&note.pitch) {
            let prev = out[idx];
            if prev.onset == note.onset {
                out[idx].duration = prev.duration.max(note.duration);
                continue;
            }
            if prev.end() > note.onset {
                out[idx].duration = note.onset - prev.onset;
            }
        }
        last_of_pitch.insert(note.pitch, out.len());
        out.push(note);
    }
    out
}

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 5];
    let mut i = buf.len() - 1;
    buf[i] = (value & 0x7f) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = (value & 0x7f) as u8 | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Serializes a score as a format-0 SMF. Overlapping notes of the same pitch
/// are written with the earlier one cut at the later onset, since MIDI cannot
/// express both.
pub fn write_midi(score: &Score) -> Vec<u8> {
    let scale = u32::from(WRITE_TICKS_PER_QUARTER) / TICKS_PER_QUARTER;
    // (tick, order, bytes): meta first, then signatures, note-offs, note-ons.
    let mut events: Vec<(u32, u8, Vec<u8>)> = Vec::new();

    let us = score.tempo_class.micros_per_quarter();
    events.push((0, 0, vec![0xff, 0x51, 0x03, (us >> 16) as u8, (us >> 8) as u8, us as u8]));
    let marker = format!(
        "{MARKER_PREFIX}composer={};start={};end={}",
        score.composer.name(),
        u8::from(score.completeness.has_true_start),
        u8::from(score.completeness.has_true_end)
    );
    let mut text = vec![0xff, 0x01];
    push_vlq(&mut text, marker.len() as u32);
    text.extend_from_slice(marker.as_bytes());
    events.push((0, 0, text));

    for bar in &score.bars {
        let ts = bar.time_signature;
        let exponent = ts.denominator().trailing_zeros() as u8;
        events.push((
            bar.start_tick * scale,
            1,
            vec![0xff, 0x58, 0x04, ts.numerator() as u8, exponent, 24, 8],
        ));
    }

    let mut next_onset: HashMap<u8, u32> = HashMap::new();
    let mut ends = vec![0u32; score.notes.len()];
    for (i, note) in score.notes.iter().enumerate().rev() {
        let mut end = note.end();
        if let Some(&next) = next_onset.get(&note.pitch) {
            end = end.min(next);
        }
        ends[i] = end.max(note.onset + 1);
        next_onset.insert(note.pitch, note.onset);
    }
    for (note, &end) in score.notes.iter().zip(&ends) {
        events.push((note.onset * scale, 3, vec![0x90, note.pitch, 64]));
        events.push((end * scale, 2, vec![0x80, note.pitch, 0]));
    }
    events.sort_by_key(|e| (e.0, e.1));

    let end_of_track = events
        .iter()
        .map(|e| e.0)
        .max()
        .unwrap_or(0)
        .max(score.end_tick() * scale);

    let mut track = Vec::new();
    let mut now = 0;
    for (tick, _, bytes) in &events {
        push_vlq(&mut track, tick - now);
        track.extend_from_slice(bytes);
        now = *tick;
    }
    push_vlq(&mut track, end_of_track - now);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&WRITE_TICKS_PER_QUARTER.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    out
}

#[cfg(test)]
pub(crate) mod test_support {
    //! Minimal SMF builder for fixtures, independent of [`write_midi`].

    pub struct TrackBuilder {
        bytes: Vec<u8>,
    }

    impl TrackBuilder {
        pub fn new() -> Self {
            TrackBuilder { bytes: Vec::new() }
        }

        fn delta(&mut self, d: u32) {
            super::push_vlq(&mut self.bytes, d);
        }

        pub fn raw(mut self, delta: u32, data: &[u8]) -> Self {
            self.delta(delta);
            self.bytes.extend_from_slice(data);
            self
        }

        pub fn time_signature(self, delta: u32, n: u8, d_exp: u8) -> Self {
            self.raw(delta, &[0xff, 0x58, 0x04, n, d_exp, 24, 8])
        }

        pub fn tempo(self, delta: u32, us: u32) -> Self {
            self.raw(delta, &[0xff, 0x51, 0x03, (us >> 16) as u8, (us >> 8) as u8, us as u8])
        }

        pub fn on(self, delta: u32, pitch: u8) -> Self {
            self.raw(delta, &[0x90, pitch, 100])
        }

        pub fn off(self, delta: u32, pitch: u8) -> Self {
            self.raw(delta, &[0x80, pitch, 0])
        }

        pub fn finish(self) -> Vec<u8> {
            let mut t = self.raw(0, &[0xff, 0x2f, 0x00]).bytes;
            let mut out = b"MTrk".to_vec();
            out.extend_from_slice(&(t.len() as u32).to_be_bytes());
            out.append(&mut t);
            out
        }
    }

    pub fn smf(format: u16, division: u16, tracks: &[Vec<u8>]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&format.to_be_bytes());
        out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&division.to_be_bytes());
        for t in tracks {
            out.extend_from_slice(t);
        }
        out
    }
}
