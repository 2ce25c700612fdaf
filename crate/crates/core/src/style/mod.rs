//! Style analysis: chord recognition, chord-progression mining, ranking
//! agreement between progression tables, and Fréchet distance between
//! embedding sets.

pub mod chords;
pub mod frechet;
pub mod progressions;
pub mod ranking;

use thiserror::Error;

pub use chords::{extract_chords, Chord, ChordQuality};
pub use frechet::{frechet_distance, EmbeddingSet};
pub use progressions::{canonicalize, mine_progressions, ChordProgression, ProgressionTable};
pub use ranking::{map_at_k, ndcg_at_k, topn_overlap, Overlap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StyleError {
    #[error("need at least 4 recognized chords, found {found}")]
    TooFewChords { found: usize },
    #[error("embedding dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("covariance is not positive semidefinite (eigenvalue {min_eigenvalue:e})")]
    NonPsdCovariance { min_eigenvalue: f64 },
    #[error("need at least 2 embedding vectors, found {0}")]
    TooFewVectors(usize),
    #[error("embedding file: {0}")]
    EmbeddingFormat(String),
}
