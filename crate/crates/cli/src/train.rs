//! `train`: one or two stages from a TOML config, on synthetic pieces or a
//! corpus index. Unknown keys are rejected.
//!
//! ```toml
//! [model]            # any field omitted falls back to the toy size
//! n_layers = 4
//! [data]
//! source = "synthetic"   # or "index", with index = "corpus.bin"
//! [pretrain]
//! steps = 3000
//! batch_size = 8
//! peak_lr = 3e-3
//! warmup_steps = 50
//! [finetune]
//! steps = 1800
//! [sampler]
//! p = 0.99
//! temperature = 1.1
//! ```

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remiforge_core::corpus::{sample_batch, CorpusIndex, Stage};
use remiforge_core::remi::{Token, Vocabulary};
use remiforge_core::Composer;
use remiforge_neural::{checkpoint, synth, Model, ModelConfig, SamplerConfig, Schedule, Sequence, TrainState};
use serde::{Deserialize, Serialize};

use crate::corpus::load_index;
use crate::error::{CliError, Result};
use crate::io::{self, RunRecord};

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    n_layers: Option<usize>,
    hidden: Option<usize>,
    heads: Option<usize>,
    context: Option<usize>,
    vocab_size: Option<usize>,
    adapter_bottleneck: Option<usize>,
    rel_pos_window: Option<usize>,
    adapter_layers: Option<Vec<usize>>,
}

impl ModelSection {
    fn resolve(&self, vocab: &Vocabulary) -> Result<ModelConfig> {
        let mut c = ModelConfig::toy(vocab.len());
        if let Some(v) = self.vocab_size.filter(|&v| v != vocab.len()) {
            return Err(CliError::usage(format!("vocab_size {v} does not match the vocabulary ({})", vocab.len())));
        }
        c.n_layers = self.n_layers.unwrap_or(c.n_layers);
        c.hidden = self.hidden.unwrap_or(c.hidden);
        c.heads = self.heads.unwrap_or(c.heads);
        c.context = self.context.unwrap_or(c.context);
        c.adapter_bottleneck = self.adapter_bottleneck.unwrap_or(c.adapter_bottleneck);
        c.rel_pos_window = self.rel_pos_window.unwrap_or(c.rel_pos_window);
        c.adapter_layers = self.adapter_layers.clone();
        c.validate().map_err(CliError::usage)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Source {
    Synthetic,
    Index,
}

fn default_pretrain_pieces() -> usize {
    200
}

fn default_per_style() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    source: Source,
    index: Option<PathBuf>,
    #[serde(default = "default_pretrain_pieces")]
    pretrain_pieces: usize,
    #[serde(default = "default_per_style")]
    finetune_per_style: usize,
}

fn default_batch() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageSection {
    steps: u64,
    #[serde(default = "default_batch")]
    batch_size: usize,
    peak_lr: Option<f64>,
    warmup_steps: Option<u64>,
    /// Defaults to `steps`, so the cosine reaches its floor at the end.
    decay_steps: Option<u64>,
    /// Fine-tuning only: update every parameter instead of the adapters and
    /// composer embeddings.
    #[serde(default)]
    full: bool,
}

impl StageSection {
    /// Unset rates and warmups take the full-scale values of the stage.
    fn schedule(&self, stage: Stage) -> Schedule {
        let base = match stage {
            Stage::Pretrain => Schedule::full_scale_pretrain(),
            Stage::Finetune => Schedule::full_scale_finetune(),
        };
        Schedule {
            peak_lr: self.peak_lr.unwrap_or(base.peak_lr),
            warmup_steps: self.warmup_steps.unwrap_or(base.warmup_steps),
            decay_steps: self.decay_steps.unwrap_or(self.steps),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    #[serde(default)]
    model: ModelSection,
    data: DataSection,
    pretrain: Option<StageSection>,
    finetune: Option<StageSection>,
    #[serde(default)]
    sampler: SamplerConfig,
    /// Checkpoint to start from instead of a fresh initialization.
    init: Option<PathBuf>,
}

/// The config with every default filled in; its JSON is what gets hashed.
#[derive(Debug, Serialize)]
struct Resolved<'a> {
    model: &'a ModelConfig,
    data: &'a DataSection,
    pretrain: Option<(&'a StageSection, Schedule)>,
    finetune: Option<(&'a StageSection, Schedule)>,
    sampler: SamplerConfig,
    init: &'a Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct StageReport {
    stage: Stage,
    steps: u64,
    final_loss: f64,
    /// Mean batch loss over the last (up to) 50 steps.
    recent_loss: f64,
}

#[derive(Debug, Serialize)]
struct RunJson<'a> {
    seed: u64,
    config_hash: String,
    tool_version: &'static str,
    threads: usize,
    parameters: usize,
    model: &'a ModelConfig,
    sampler: SamplerConfig,
    stages: Vec<StageReport>,
}

enum Data {
    Synthetic { pretrain: Vec<Sequence>, finetune: Vec<Sequence> },
    Index(CorpusIndex),
}

impl Data {
    fn batch<R: Rng>(&self, stage: Stage, size: usize, context: usize, vocab: &Vocabulary, rng: &mut R) -> Result<Vec<Sequence>> {
        match self {
            Data::Synthetic { pretrain, finetune } => {
                let pool = match stage {
                    Stage::Pretrain => pretrain,
                    Stage::Finetune => finetune,
                };
                if pool.is_empty() {
                    return Err(CliError::usage("the synthetic corpus for this stage is empty"));
                }
                Ok((0..size).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect())
            }
            Data::Index(index) => {
                let segments = sample_batch(index, size, context, stage, vocab, rng).map_err(CliError::data)?;
                Ok(segments
                    .into_iter()
                    .map(|s| {
                        let composer = match vocab.token(s.ids[0]) {
                            Ok(Token::Composer(c)) => c,
                            _ => Composer::Unspecified,
                        };
                        Sequence { ids: s.ids, composer }
                    })
                    .collect())
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    state: &mut TrainState,
    data: &Data,
    section: &StageSection,
    schedule: &Schedule,
    stage: Stage,
    vocab: &Vocabulary,
    rng: &mut ChaCha8Rng,
) -> Result<StageReport> {
    if section.batch_size == 0 {
        return Err(CliError::usage("batch_size must be positive"));
    }
    let context = state.model.config.context;
    let mut losses = Vec::with_capacity(section.steps as usize);
    for step in 0..section.steps {
        let batch = data.batch(stage, section.batch_size, context, vocab, rng)?;
        let loss = state
            .step(&batch, schedule, stage, section.full, vocab)
            .map_err(CliError::data)?;
        losses.push(loss);
        if (step + 1) % 100 == 0 || step + 1 == section.steps {
            eprintln!("{stage:?} step {} loss {loss:.4}", step + 1);
        }
    }
    let recent = &losses[losses.len().saturating_sub(50)..];
    Ok(StageReport {
        stage,
        steps: section.steps,
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        recent_loss: recent.iter().sum::<f64>() / recent.len().max(1) as f64,
    })
}

pub fn train(config_path: &Path, seed: u64, out: &Path) -> Result<RunRecord> {
    let text = io::read_text(config_path)?;
    let config: TrainConfig = toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", config_path.display())))?;
    let vocab = Vocabulary::new();
    let model_config = config.model.resolve(&vocab)?;
    config.sampler.validate().map_err(CliError::usage)?;
    if config.pretrain.is_none() && config.finetune.is_none() {
        return Err(CliError::usage("config has neither a [pretrain] nor a [finetune] section"));
    }
    let resolved = Resolved {
        model: &model_config,
        data: &config.data,
        pretrain: config.pretrain.as_ref().map(|s| (s, s.schedule(Stage::Pretrain))),
        finetune: config.finetune.as_ref().map(|s| (s, s.schedule(Stage::Finetune))),
        sampler: config.sampler,
        init: &config.init,
    };
    let config_hash = io::sha256_hex(&serde_json::to_vec(&resolved).expect("config serializes"));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = vec![config_path.to_path_buf()];
    let data = match config.data.source {
        Source::Synthetic => Data::Synthetic {
            pretrain: synth::pretrain_corpus(config.data.pretrain_pieces, &vocab, &mut rng),
            finetune: synth::finetune_corpus(config.data.finetune_per_style, &vocab, &mut rng),
        },
        Source::Index => {
            let path = config
                .data
                .index
                .as_ref()
                .ok_or_else(|| CliError::usage("data.source = \"index\" needs data.index"))?;
            // Relative paths are taken from the config file's directory.
            let path = config_path.parent().unwrap_or(Path::new(".")).join(path);
            inputs.push(path.clone());
            Data::Index(load_index(&path, &vocab)?)
        }
    };
    let mut state = match &config.init {
        Some(init) => {
            let path = config_path.parent().unwrap_or(Path::new(".")).join(init);
            let bytes = io::read(&path)?;
            inputs.push(path.clone());
            checkpoint::from_bytes(&bytes, vocab.pad_id(), Some(&model_config)).map_err(|e| CliError::at(&path, e))?
        }
        None => TrainState::new(Model::new(model_config.clone(), vocab.pad_id(), &mut rng).map_err(CliError::usage)?),
    };

    std::fs::create_dir_all(out).map_err(|e| CliError::at(out, e))?;
    let mut outputs = Vec::new();
    let mut stages = Vec::new();
    if let Some((section, schedule)) = &resolved.pretrain {
        state = state.restart();
        stages.push(run_stage(&mut state, &data, section, schedule, Stage::Pretrain, &vocab, &mut rng)?);
        if resolved.finetune.is_some() {
            let path = out.join("pretrained.ckpt");
            io::write_atomic(&path, &checkpoint::to_bytes(&state))?;
            outputs.push(path);
        }
    }
    if let Some((section, schedule)) = &resolved.finetune {
        state = state.restart();
        stages.push(run_stage(&mut state, &data, section, schedule, Stage::Finetune, &vocab, &mut rng)?);
    }

    let ckpt = out.join("model.ckpt");
    io::write_atomic(&ckpt, &checkpoint::to_bytes(&state))?;
    let run = RunJson {
        seed,
        config_hash,
        tool_version: env!("CARGO_PKG_VERSION"),
        threads: 1,
        parameters: state.model.params.count(),
        model: &model_config,
        sampler: config.sampler,
        stages,
    };
    let run_path = out.join("run.json");
    io::write_atomic(&run_path, &io::to_json(&run))?;
    outputs.extend([ckpt, run_path]);
    Ok(RunRecord {
        seed: Some(seed),
        inputs,
        outputs,
        ..Default::default()
    })
}
