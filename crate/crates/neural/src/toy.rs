//! The two-stage experiment at toy scale: pretrain on unlabelled synthetic
//! pieces, fine-tune the adapters on two labelled styles, then check that the
//! composer token steers generation.

use rand::Rng;
use remiforge_core::corpus::Stage;
use remiforge_core::remi::{Token, Vocabulary};
use remiforge_core::{Composer, TempoClass};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, SamplerConfig, Schedule};
use crate::model::{Model, Sequence};
use crate::optim::TrainState;
use crate::sampling::{choice_count, sample};
use crate::synth::{self, Style};
use crate::NeuralError;

/// Corpus sizes and optimizer settings for both stages. The defaults are the
/// smallest settings found to separate the two styles reliably on one core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyRecipe {
    pub pretrain_pieces: usize,
    pub finetune_per_style: usize,
    pub pretrain_steps: u64,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub pretrain_warmup: u64,
    pub finetune_steps: u64,
    pub finetune_batch: usize,
    pub finetune_lr: f64,
    pub finetune_warmup: u64,
}

impl Default for ToyRecipe {
    fn default() -> Self {
        ToyRecipe {
            pretrain_pieces: 200,
            finetune_per_style: 50,
            pretrain_steps: 3000,
            pretrain_batch: 8,
            pretrain_lr: 3e-3,
            pretrain_warmup: 50,
            finetune_steps: 1800,
            finetune_batch: 16,
            finetune_lr: 1e-2,
            finetune_warmup: 25,
        }
    }
}

impl ToyRecipe {
    pub fn pretrain_schedule(&self) -> Schedule {
        Schedule {
            peak_lr: self.pretrain_lr,
            warmup_steps: self.pretrain_warmup,
            decay_steps: self.pretrain_steps,
        }
    }

    pub fn finetune_schedule(&self) -> Schedule {
        Schedule {
            peak_lr: self.finetune_lr,
            warmup_steps: self.finetune_warmup,
            decay_steps: self.finetune_steps,
        }
    }
}

/// Runs `steps` optimizer steps on batches drawn uniformly with replacement.
/// Returns the last batch loss.
#[allow(clippy::too_many_arguments)]
pub fn train_on<R: Rng + ?Sized>(
    state: &mut TrainState,
    corpus: &[Sequence],
    steps: u64,
    batch_size: usize,
    schedule: &Schedule,
    stage: Stage,
    vocab: &Vocabulary,
    rng: &mut R,
    mut progress: impl FnMut(u64, f64),
) -> Result<f64, NeuralError> {
    if corpus.is_empty() || batch_size == 0 {
        return Err(NeuralError::EmptyBatch);
    }
    let mut loss = f64::NAN;
    for _ in 0..steps {
        let batch: Vec<Sequence> = (0..batch_size).map(|_| corpus[rng.gen_range(0..corpus.len())].clone()).collect();
        loss = state.step(&batch, schedule, stage, false, vocab)?;
        progress(state.step, loss);
    }
    Ok(loss)
}

pub struct ToyRun {
    pub pretrained: TrainState,
    pub finetuned: TrainState,
    pub pretrain_loss: f64,
    pub finetune_loss: f64,
}

pub fn run<R: Rng + ?Sized>(
    config: &ModelConfig,
    recipe: &ToyRecipe,
    vocab: &Vocabulary,
    rng: &mut R,
    mut progress: impl FnMut(Stage, u64, f64),
) -> Result<ToyRun, NeuralError> {
    let pre_corpus = synth::pretrain_corpus(recipe.pretrain_pieces, vocab, rng);
    let ft_corpus = synth::finetune_corpus(recipe.finetune_per_style, vocab, rng);
    let mut state = TrainState::new(Model::new(config.clone(), vocab.pad_id(), rng)?);
    let pretrain_loss = train_on(
        &mut state,
        &pre_corpus,
        recipe.pretrain_steps,
        recipe.pretrain_batch,
        &recipe.pretrain_schedule(),
        Stage::Pretrain,
        vocab,
        rng,
        |s, l| progress(Stage::Pretrain, s, l),
    )?;
    let pretrained = state.clone();
    let mut state = state.restart();
    let finetune_loss = train_on(
        &mut state,
        &ft_corpus,
        recipe.finetune_steps,
        recipe.finetune_batch,
        &recipe.finetune_schedule(),
        Stage::Finetune,
        vocab,
        rng,
        |s, l| progress(Stage::Finetune, s, l),
    )?;
    Ok(ToyRun {
        pretrained,
        finetuned: state,
        pretrain_loss,
        finetune_loss,
    })
}

/// `[Composer][Tempo_120][BOS]`, the opening of every synthetic piece.
pub fn opening(composer: Composer, vocab: &Vocabulary) -> Vec<u32> {
    [Token::Composer(composer), Token::Tempo(TempoClass::Bpm120), Token::Bos]
        .iter()
        .map(|&t| vocab.id(t).expect("opening tokens are in the vocabulary"))
        .collect()
}

/// Longest generation needed for a full synthetic piece, with slack.
pub const MAX_NEW_TOKENS: usize = 200;

/// Counts how many of `n` free generations under `composer` the
/// discriminator assigns to `style`.
pub fn style_hits<R: Rng + ?Sized>(
    model: &Model,
    sampler: &SamplerConfig,
    composer: Composer,
    style: Style,
    n: usize,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<usize, NeuralError> {
    let prompt = opening(composer, vocab);
    let mut hits = 0;
    for _ in 0..n {
        let ids = sample(model, sampler, &prompt, composer, MAX_NEW_TOKENS, vocab, rng)?;
        if synth::classify(&ids, vocab) == Some(style) {
            hits += 1;
        }
    }
    Ok(hits)
}

/// Mean clamped choice count of both models over `n` fresh pieces that
/// alternate between the two labelled styles. The pretrained model sees each
/// primer with the `None` composer, the fine-tuned one with the label.
/// Returns `(pretrained, finetuned)`.
pub fn compare_choice_counts<R: Rng + ?Sized>(
    pretrained: &Model,
    finetuned: &Model,
    sampler: &SamplerConfig,
    n: usize,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<(f64, f64), NeuralError> {
    let none = vocab.id(Token::Composer(Composer::Unspecified)).expect("composer token");
    let (mut before, mut after) = (0.0, 0.0);
    for i in 0..n {
        let style = if i % 2 == 0 { Style::Stepwise } else { Style::Arpeggio };
        let composer = style.composer().expect("labelled style");
        let piece = synth::synth_sequence(style, composer, vocab, rng);
        let mut unlabelled = piece.ids.clone();
        unlabelled[0] = none;
        before += choice_count(pretrained, sampler, &unlabelled, Composer::Unspecified, vocab, rng)?.clamped_mean;
        after += choice_count(finetuned, sampler, &piece.ids, composer, vocab, rng)?.clamped_mean;
    }
    Ok((before / n as f64, after / n as f64))
}
