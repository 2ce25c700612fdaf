//! Symbolic piano music toolkit: MIDI ↔ score conversion, an extended REMI
//! tokenizer, corpus preparation for language-model training, objective
//! quality metrics and chord-progression style analysis.

pub mod corpus;
pub mod generate;
pub mod metrics;
pub mod midi;
pub mod remi;
pub mod score;
pub mod style;

pub use midi::{parse_midi, write_midi, MidiError};
pub use remi::{decode, encode, Token, TokenizeError, Vocabulary};
pub use score::{Completeness, Composer, Note, Score, TempoClass, TimeSignature};
