use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use remiforge_core::corpus::{sample_batch, CorpusIndex, Stage};
use remiforge_core::remi::{from_ids, ids_to_text, to_ids, tokens_to_text, Token, Vocabulary};
use remiforge_core::{decode, encode, write_midi, Composer};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::io::{self, RunRecord};

pub fn tokenize(input: &Path, out: Option<&Path>, as_ids: bool, composer: Option<Composer>) -> Result<RunRecord> {
    let mut score = io::load_score(input)?;
    if let Some(c) = composer {
        score.composer = c;
    }
    let tokens = encode(&score).map_err(|e| CliError::at(input, e))?;
    let text = if as_ids {
        ids_to_text(&to_ids(&tokens, &Vocabulary::new()).map_err(|e| CliError::at(input, e))?)
    } else {
        tokens_to_text(&tokens)
    };
    io::emit(out, text.as_bytes())?;
    Ok(RunRecord {
        inputs: vec![input.into()],
        outputs: out.map(Into::into).into_iter().collect(),
        ..Default::default()
    })
}

pub fn detokenize(input: &Path, out: &Path) -> Result<RunRecord> {
    if io::is_midi(input) {
        return Err(CliError::usage(format!("{} is already MIDI", input.display())));
    }
    let vocab = Vocabulary::new();
    let ids = io::load_ids(input, &vocab)?;
    let tokens = from_ids(&ids, &vocab).map_err(|e| CliError::at(input, e))?;
    let score = decode(&tokens).map_err(|e| CliError::at(input, e))?;
    io::write_atomic(out, &write_midi(&score))?;
    Ok(RunRecord {
        inputs: vec![input.into()],
        outputs: vec![out.into()],
        ..Default::default()
    })
}

pub fn vocab(out: Option<&Path>) -> Result<RunRecord> {
    io::emit(out, Vocabulary::new().to_tsv().as_bytes())?;
    Ok(RunRecord {
        outputs: out.map(Into::into).into_iter().collect(),
        ..Default::default()
    })
}

pub fn index(manifest: &Path, out: &Path) -> Result<RunRecord> {
    let index = CorpusIndex::from_manifest(manifest).map_err(|e| CliError::at(manifest, e))?;
    io::write_atomic(out, &index.to_bytes(&Vocabulary::new()))?;
    eprintln!("indexed {} files", index.entries.len());
    Ok(RunRecord {
        inputs: vec![manifest.into()],
        outputs: vec![out.into()],
        ..Default::default()
    })
}

pub fn load_index(path: &Path, vocab: &Vocabulary) -> Result<CorpusIndex> {
    CorpusIndex::from_bytes(&io::read(path)?, vocab).map_err(|e| CliError::at(path, e))
}

#[derive(Debug, Default, Serialize)]
struct LengthStats {
    mean: f64,
    min: usize,
    max: usize,
}

#[derive(Debug, Serialize)]
struct SegmentStats {
    stage: Stage,
    context: usize,
    seed: u64,
    segments: usize,
    /// Draws per category label (genre when pretraining, composer when
    /// fine-tuning).
    categories: BTreeMap<String, usize>,
    /// Draws per leading composer token.
    composer_tokens: BTreeMap<String, usize>,
    attention_length: LengthStats,
    with_bos: usize,
    with_eos: usize,
    padding_fraction: f64,
}

pub fn segment_stats(
    index_path: &Path,
    context: usize,
    stage: Stage,
    batches: usize,
    batch_size: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<RunRecord> {
    if context < 4 || batches == 0 || batch_size == 0 {
        return Err(CliError::usage("context must be at least 4 and batch counts positive"));
    }
    let vocab = Vocabulary::new();
    let index = load_index(index_path, &vocab)?;
    let label: HashMap<&str, String> = index
        .entries
        .iter()
        .map(|e| {
            let l = match stage {
                Stage::Pretrain => e.category.clone(),
                Stage::Finetune => e.composer.name().to_string(),
            };
            (e.path.as_str(), l)
        })
        .collect();
    let bos = vocab.id(Token::Bos).expect("bos token");
    let eos = vocab.id(Token::Eos).expect("eos token");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = SegmentStats {
        stage,
        context,
        seed,
        segments: 0,
        categories: BTreeMap::new(),
        composer_tokens: BTreeMap::new(),
        attention_length: LengthStats {
            min: usize::MAX,
            ..Default::default()
        },
        with_bos: 0,
        with_eos: 0,
        padding_fraction: 0.0,
    };
    let mut total_len = 0;
    for _ in 0..batches {
        let batch = sample_batch(&index, batch_size, context, stage, &vocab, &mut rng).map_err(|e| CliError::at(index_path, e))?;
        for seg in batch {
            stats.segments += 1;
            *stats.categories.entry(label[seg.source.file.as_str()].clone()).or_default() += 1;
            let composer = match vocab.token(seg.ids[0]) {
                Ok(Token::Composer(c)) => c.name().to_string(),
                _ => "?".to_string(),
            };
            *stats.composer_tokens.entry(composer).or_default() += 1;
            let content = seg.content();
            total_len += content.len();
            stats.attention_length.min = stats.attention_length.min.min(content.len());
            stats.attention_length.max = stats.attention_length.max.max(content.len());
            stats.with_bos += usize::from(content.get(2) == Some(&bos));
            stats.with_eos += usize::from(content.last() == Some(&eos));
        }
    }
    stats.attention_length.mean = total_len as f64 / stats.segments as f64;
    stats.padding_fraction = 1.0 - total_len as f64 / (stats.segments * context) as f64;
    io::emit(out, &io::to_json(&stats))?;
    Ok(RunRecord {
        seed: Some(seed),
        inputs: vec![index_path.into()],
        outputs: out.map(Into::into).into_iter().collect(),
        ..Default::default()
    })
}
