use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use remiforge_core::remi::{from_ids, ids_to_text, tokens_to_text, Token, Vocabulary};
use remiforge_core::{decode, write_midi, Composer, TempoClass};
use remiforge_neural::{checkpoint, choice_count, sample as sample_ids, ChoiceSummary, Model, SamplerConfig};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::io::{self, RunRecord};

fn load_model(path: &Path, vocab: &Vocabulary) -> Result<Model> {
    let bytes = io::read(path)?;
    let state = checkpoint::from_bytes(&bytes, vocab.pad_id(), None).map_err(|e| CliError::at(path, e))?;
    if state.model.config.vocab_size != vocab.len() {
        return Err(CliError::at(path, "checkpoint vocabulary does not match"));
    }
    Ok(state.model)
}

fn sampler(p: f64, temperature: f64) -> Result<SamplerConfig> {
    let s = SamplerConfig { p, temperature };
    s.validate().map_err(CliError::usage)?;
    Ok(s)
}

/// Puts `composer` in the leading slot when the sequence starts with a
/// composer token, so the token and the adapter condition agree.
fn relabel(ids: &mut [u32], composer: Composer, vocab: &Vocabulary) {
    if let Some(first) = ids.first_mut() {
        if matches!(vocab.token(*first), Ok(Token::Composer(_))) {
            *first = vocab.id(Token::Composer(composer)).expect("composer token");
        }
    }
}

pub struct SampleArgs<'a> {
    pub checkpoint: &'a Path,
    pub composer: Composer,
    pub prompt: Option<&'a Path>,
    pub tempo: u32,
    pub max_new: usize,
    pub p: f64,
    pub temperature: f64,
    pub seed: u64,
    pub ids: bool,
    pub out: Option<&'a Path>,
    pub midi: Option<&'a Path>,
}

pub fn sample(args: SampleArgs) -> Result<RunRecord> {
    let vocab = Vocabulary::new();
    let sampler = sampler(args.p, args.temperature)?;
    let model = load_model(args.checkpoint, &vocab)?;
    let mut inputs = vec![args.checkpoint.to_path_buf()];
    let mut prompt = match args.prompt {
        Some(path) => {
            inputs.push(path.to_path_buf());
            io::load_ids(path, &vocab)?
        }
        None => {
            let tempo = TempoClass::from_bpm_exact(args.tempo)
                .ok_or_else(|| CliError::usage(format!("tempo must be one of 40, 80, 120, 160, got {}", args.tempo)))?;
            [Token::Composer(args.composer), Token::Tempo(tempo), Token::Bos]
                .iter()
                .map(|&t| vocab.id(t).expect("prompt tokens are in the vocabulary"))
                .collect()
        }
    };
    relabel(&mut prompt, args.composer, &vocab);
    if prompt.len() > model.config.context {
        return Err(CliError::usage(format!(
            "prompt has {} tokens, the model context is {}",
            prompt.len(),
            model.config.context
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let generated = sample_ids(&model, &sampler, &prompt, args.composer, args.max_new, &vocab, &mut rng).map_err(CliError::data)?;
    let mut ids = prompt;
    ids.extend(generated);
    let tokens = from_ids(&ids, &vocab).map_err(CliError::data)?;
    let text = if args.ids { ids_to_text(&ids) } else { tokens_to_text(&tokens) };
    let mut outputs = Vec::new();
    // Decode before writing anything so a malformed generation leaves no files.
    let midi = match args.midi {
        Some(path) => {
            let score = decode(&tokens).map_err(|e| CliError::data(format!("generated sequence does not decode: {e}")))?;
            Some((path, write_midi(&score)))
        }
        None => None,
    };
    io::emit(args.out, text.as_bytes())?;
    outputs.extend(args.out.map(PathBuf::from));
    if let Some((path, bytes)) = midi {
        io::write_atomic(path, &bytes)?;
        outputs.push(path.to_path_buf());
    }
    Ok(RunRecord {
        seed: Some(args.seed),
        inputs,
        outputs,
        ..Default::default()
    })
}

#[derive(Debug, Serialize)]
struct PrimerChoices {
    file: String,
    #[serde(flatten)]
    summary: ChoiceSummary,
}

#[derive(Debug, Serialize)]
struct ChoicesReport {
    composer: Composer,
    p: f64,
    temperature: f64,
    seed: u64,
    primers: Vec<PrimerChoices>,
    /// Mean of the per-primer clamped means.
    mean_clamped: f64,
}

pub fn choices(
    checkpoint: &Path,
    composer: Composer,
    p: f64,
    temperature: f64,
    seed: u64,
    primers: &[PathBuf],
    out: Option<&Path>,
) -> Result<RunRecord> {
    let vocab = Vocabulary::new();
    let sampler = sampler(p, temperature)?;
    let model = load_model(checkpoint, &vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(primers.len());
    for path in primers {
        let mut ids = io::load_ids(path, &vocab)?;
        relabel(&mut ids, composer, &vocab);
        let summary = choice_count(&model, &sampler, &ids, composer, &vocab, &mut rng).map_err(|e| CliError::at(path, e))?;
        rows.push(PrimerChoices {
            file: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            summary,
        });
    }
    let mean_clamped = rows.iter().map(|r| r.summary.clamped_mean).sum::<f64>() / rows.len() as f64;
    let report = ChoicesReport {
        composer,
        p,
        temperature,
        seed,
        primers: rows,
        mean_clamped,
    };
    io::emit(out, &io::to_json(&report))?;
    let mut inputs = vec![checkpoint.to_path_buf()];
    inputs.extend(primers.iter().cloned());
    Ok(RunRecord {
        seed: Some(seed),
        inputs,
        outputs: out.map(Into::into).into_iter().collect(),
        ..Default::default()
    })
}
