//! Temperature plus nucleus sampling, and the per-step choice-count
//! diagnostic.

use ndarray::ArrayView1;
use rand::Rng;
use remiforge_core::remi::{Token, Vocabulary};
use remiforge_core::Composer;
use serde::Serialize;

use crate::config::SamplerConfig;
use crate::model::{DecodeState, Model};
use crate::NeuralError;

/// Mass used when counting remaining choices.
pub const CHOICE_P: f64 = 0.99;
pub const PRIMER_BARS: usize = 4;
/// Cap on the number of steps spent generating the bar after the primer.
pub const MAX_CHOICE_STEPS: usize = 512;

/// Softmax of `logits / temperature` with the listed ids forced to zero.
pub fn tempered_softmax(logits: ArrayView1<f64>, temperature: f64, masked: &[u32]) -> Vec<f64> {
    let scaled: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if masked.contains(&(i as u32)) {
                f64::NEG_INFINITY
            } else {
                v / temperature
            }
        })
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = scaled.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= sum);
    e
}

/// The smallest prefix of tokens, by descending probability (ties by lower
/// id), whose cumulative mass reaches `p`; renormalized.
pub fn nucleus(probs: &[f64], p: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push((i, probs[i]));
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    kept.iter_mut().for_each(|(_, q)| *q /= mass);
    kept
}

pub fn nucleus_size(probs: &[f64], p: f64) -> usize {
    nucleus(probs, p).len()
}

fn draw<R: Rng + ?Sized>(kept: &[(usize, f64)], rng: &mut R) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for &(i, q) in kept {
        acc += q;
        if r < acc {
            return i;
        }
    }
    kept.last().expect("nucleus is never empty").0
}

/// Drops the oldest bar after the two conditioning tokens, or failing that
/// the oldest tokens, so that the window is strictly shorter than `context`.
fn slide(window: &[u32], context: usize, bar_id: u32) -> Vec<u32> {
    let keep = 2.min(window.len());
    let rest = &window[keep..];
    let bars: Vec<usize> = rest.iter().enumerate().filter(|(_, &id)| id == bar_id).map(|(i, _)| i).take(2).collect();
    let cut = match bars.as_slice() {
        [_, second] if rest.len() - second + keep < context => *second,
        _ => rest.len() + keep + 1 - context,
    };
    let mut out = window[..keep].to_vec();
    out.extend_from_slice(&rest[cut..]);
    out
}

/// Generated tokens and the nucleus size at `CHOICE_P` before each one.
pub struct Generation {
    pub tokens: Vec<u32>,
    pub choices: Vec<usize>,
}

/// Autoregressive generation until `stop` returns true for a produced token
/// or `max_new` tokens exist. The prompt must fit the context.
pub fn generate<R: Rng + ?Sized>(
    model: &Model,
    sampler: &SamplerConfig,
    prompt: &[u32],
    composer: Composer,
    max_new: usize,
    vocab: &Vocabulary,
    rng: &mut R,
    mut stop: impl FnMut(u32) -> bool,
) -> Result<Generation, NeuralError> {
    sampler.validate()?;
    if prompt.is_empty() {
        return Err(NeuralError::InvalidConfig("prompt is empty".into()));
    }
    let bar_id = vocab.id(Token::Bar).expect("bar token");
    let context = model.config.context;
    let masked = [model.pad_id()];
    let mut window = prompt.to_vec();
    let mut state = DecodeState::new(model, composer);
    let logits = state.feed(&window)?;
    let mut last = logits.row(logits.nrows() - 1).to_owned();
    let mut out = Generation {
        tokens: Vec::new(),
        choices: Vec::new(),
    };
    while out.tokens.len() < max_new {
        let probs = tempered_softmax(last.view(), sampler.temperature, &masked);
        out.choices.push(nucleus_size(&probs, CHOICE_P));
        let next = draw(&nucleus(&probs, sampler.p), rng) as u32;
        out.tokens.push(next);
        if stop(next) || out.tokens.len() == max_new {
            break;
        }
        window.push(next);
        let logits = if window.len() > context {
            window = slide(&window, context, bar_id);
            state = DecodeState::new(model, composer);
            state.feed(&window)?
        } else {
            state.feed(&[next])?
        };
        last = logits.row(logits.nrows() - 1).to_owned();
    }
    Ok(out)
}

/// Samples up to `max_new` tokens after `prompt`, stopping at EOS.
pub fn sample<R: Rng + ?Sized>(
    model: &Model,
    sampler: &SamplerConfig,
    prompt: &[u32],
    composer: Composer,
    max_new: usize,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<Vec<u32>, NeuralError> {
    let eos = vocab.id(Token::Eos).expect("eos token");
    Ok(generate(model, sampler, prompt, composer, max_new, vocab, rng, |t| t == eos)?.tokens)
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile_nearest_rank(sorted: &[usize], pct: f64) -> usize {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChoiceSummary {
    pub counts: Vec<usize>,
    pub lower: usize,
    pub upper: usize,
    /// Mean after clamping every count into `[lower, upper]`.
    pub clamped_mean: f64,
}

impl ChoiceSummary {
    pub fn from_counts(counts: Vec<usize>) -> Option<Self> {
        if counts.is_empty() {
            return None;
        }
        let mut sorted = counts.clone();
        sorted.sort_unstable();
        let lower = percentile_nearest_rank(&sorted, 10.0);
        let upper = percentile_nearest_rank(&sorted, 90.0);
        let clamped_mean = counts.iter().map(|&c| c.clamp(lower, upper) as f64).sum::<f64>() / counts.len() as f64;
        Some(ChoiceSummary {
            counts,
            lower,
            upper,
            clamped_mean,
        })
    }
}

/// Cuts a piece to its first four bars. Fails when it has fewer.
pub fn primer(ids: &[u32], vocab: &Vocabulary) -> Result<Vec<u32>, NeuralError> {
    let bar = vocab.id(Token::Bar).expect("bar token");
    let bars: Vec<usize> = ids.iter().enumerate().filter(|(_, &id)| id == bar).map(|(i, _)| i).collect();
    if bars.len() < PRIMER_BARS {
        return Err(NeuralError::PrimerTooShort { bars: bars.len() });
    }
    let end = match bars.get(PRIMER_BARS) {
        Some(&next) => next,
        None => {
            let tail = [vocab.pad_id(), vocab.id(Token::Eos).expect("eos token")];
            ids.iter().rposition(|id| !tail.contains(id)).map_or(0, |i| i + 1)
        }
    };
    Ok(ids[..end].to_vec())
}

/// Generates the bar following a four-bar primer and records the number of
/// tokens left in the nucleus at every step.
pub fn choice_count<R: Rng + ?Sized>(
    model: &Model,
    sampler: &SamplerConfig,
    piece: &[u32],
    composer: Composer,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<ChoiceSummary, NeuralError> {
    let prompt = primer(piece, vocab)?;
    let bar = vocab.id(Token::Bar).expect("bar token");
    let eos = vocab.id(Token::Eos).expect("eos token");
    let mut bars_seen = 0;
    let stop = |t: u32| {
        if t == bar {
            bars_seen += 1;
        }
        t == eos || bars_seen == 2
    };
    let run = generate(model, sampler, &prompt, composer, MAX_CHOICE_STEPS, vocab, rng, stop)?;
    Ok(ChoiceSummary::from_counts(run.choices).expect("at least one step"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nucleus_size_examples() {
        assert_eq!(nucleus_size(&[0.5, 0.3, 0.15, 0.05], 0.99), 4);
        let mut rest = vec![0.005 / 9.0; 9];
        rest.insert(3, 0.995);
        assert_eq!(nucleus_size(&rest, 0.99), 1);
        assert_eq!(nucleus_size(&[0.25; 4], 1.0), 4);
        assert_eq!(nucleus_size(&[0.5, 0.3, 0.15, 0.05], 0.8), 2);
    }

    #[test]
    fn nucleus_renormalizes_and_keeps_ratios() {
        let kept = nucleus(&[0.1, 0.5, 0.3, 0.1], 0.75);
        assert_eq!(kept.iter().map(|k| k.0).collect::<Vec<_>>(), vec![1, 2]);
        assert!((kept[0].1 - 0.625).abs() < 1e-12);
        assert!((kept[0].1 / kept[1].1 - 5.0 / 3.0).abs() < 1e-12);
        assert!((kept.iter().map(|k| k.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tempered_softmax_masks_and_sums_to_one() {
        let logits = ndarray::arr1(&[3.0, 1.0, 2.0, 0.5]);
        let p = tempered_softmax(logits.view(), 1.1, &[0]);
        assert_eq!(p[0], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let cold = tempered_softmax(logits.view(), 1e-6, &[]);
        assert_eq!(cold[0], 1.0);
    }

    #[test]
    fn percentile_clamp_example() {
        let s = ChoiceSummary::from_counts(vec![1, 1, 2, 2, 3, 3, 4, 4, 9, 50]).unwrap();
        assert_eq!((s.lower, s.upper), (1, 9));
        assert!((s.clamped_mean - 3.8).abs() < 1e-12);
        assert!(ChoiceSummary::from_counts(vec![]).is_none());
    }

    #[test]
    fn sliding_window_keeps_conditioning_prefix() {
        // composer, tempo, BOS, Bar x, Bar y y, Bar z
        let w = vec![4, 11, 1, 3, 20, 3, 21, 22, 3, 23];
        let out = slide(&w, 10, 3);
        assert_eq!(out, vec![4, 11, 3, 21, 22, 3, 23]);
        let single = vec![4, 11, 3, 20, 21, 22, 23, 24];
        assert_eq!(slide(&single, 8, 3), vec![4, 11, 20, 21, 22, 23, 24]);
    }

    fn tiny_model() -> Model {
        let mut c = ModelConfig::toy(170);
        c.hidden = 16;
        c.heads = 2;
        c.n_layers = 2;
        c.context = 24;
        Model::new(c, 0, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
    }

    #[test]
    fn cold_sampling_is_greedy_and_seeded_runs_repeat() {
        let m = tiny_model();
        let vocab = Vocabulary::new();
        let prompt = [4, 11, 1];
        let cold = SamplerConfig {
            p: 0.99,
            temperature: 1e-6,
        };
        let got = sample(&m, &cold, &prompt, Composer::Unspecified, 40, &vocab, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // Greedy reference with full recomputation and sliding.
        let mut window = prompt.to_vec();
        let mut expect = Vec::new();
        for _ in 0..40 {
            let logits = m.forward(&window, Composer::Unspecified).unwrap();
            let row = logits.row(window.len() - 1);
            let best = (1..170).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap() as u32;
            expect.push(best);
            if best == 2 {
                break;
            }
            window.push(best);
            if window.len() > 24 {
                window = slide(&window, 24, 3);
            }
        }
        assert_eq!(got, expect);

        let warm = SamplerConfig {
            p: 0.9,
            temperature: 1.1,
        };
        let a = sample(&m, &warm, &prompt, Composer::Bach, 60, &vocab, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample(&m, &warm, &prompt, Composer::Bach, 60, &vocab, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(!a.contains(&0));
    }

    #[test]
    fn primer_needs_four_bars() {
        let vocab = Vocabulary::new();
        let three = [4, 11, 1, 3, 15, 3, 15, 3, 15, 2];
        assert!(matches!(primer(&three, &vocab), Err(NeuralError::PrimerTooShort { bars: 3 })));
        let five = [4, 11, 3, 15, 3, 15, 3, 15, 3, 15, 3, 15, 2];
        assert_eq!(primer(&five, &vocab).unwrap(), &five[..10]);
        let four = [4, 11, 3, 15, 3, 15, 3, 15, 3, 15, 2, 0];
        assert_eq!(primer(&four, &vocab).unwrap(), &four[..10]);
    }

    #[test]
    fn choice_count_records_every_step() {
        let m = tiny_model();
        let vocab = Vocabulary::new();
        let piece = [4, 11, 3, 15, 3, 15, 3, 15, 3, 15, 3, 15, 2];
        let s = choice_count(&m, &SamplerConfig::default(), &piece, Composer::Unspecified, &vocab, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(!s.counts.is_empty());
        assert!(s.lower <= s.upper);
        assert!(s.counts.iter().all(|&c| (1..=169).contains(&c)));
    }
}
