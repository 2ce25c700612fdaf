use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use remiforge_core::corpus::Stage;
use remiforge_core::remi::Vocabulary;
use remiforge_core::Composer;
use remiforge_neural::checkpoint;
use remiforge_neural::params::Group;
use remiforge_neural::{synth, Model, ModelConfig, Schedule, Sequence, TrainState};

fn grad_check_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        hidden: 8,
        heads: 2,
        context: 16,
        vocab_size: 170,
        adapter_bottleneck: 4,
        rel_pos_window: 4,
        adapter_layers: Some(vec![1]),
    }
}

/// Moves every tensor away from its structured initialization so that no
/// gradient vanishes by construction (zero up-projection, unit gains, zero
/// biases).
fn perturb(model: &mut Model, rng: &mut ChaCha8Rng) {
    let noise = Normal::new(0.0, 0.3).unwrap();
    for t in model.params.tensors.iter_mut() {
        t.mapv_inplace(|v| v + noise.sample(rng));
    }
}

fn random_sequence(rng: &mut ChaCha8Rng, len: usize, composer: Composer) -> Sequence {
    Sequence {
        ids: (0..len).map(|_| rng.gen_range(1..170)).collect(),
        composer,
    }
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut model = Model::new(grad_check_config(), 0, &mut rng).unwrap();
    perturb(&mut model, &mut rng);
    let mut padded = random_sequence(&mut rng, 13, Composer::Chopin);
    padded.ids.extend([0, 0, 0]);
    let batch = vec![random_sequence(&mut rng, 16, Composer::Bach), padded];
    let (_, grads) = model.loss_and_grad(&batch).unwrap();

    // Only rows touched by the batch can have nonzero embedding or composer
    // gradients; sample those plus uniform draws from every other tensor.
    let used_rows: Vec<usize> = batch.iter().flat_map(|s| s.ids.iter().map(|&i| i as usize)).filter(|&i| i != 0).collect();
    let adapter = model.params.layout.adapters[0].unwrap();
    let mut picks = Vec::new();
    for (ti, t) in model.params.tensors.iter().enumerate() {
        let (rows, cols) = t.dim();
        for _ in 0..24 {
            let r = if ti == model.params.layout.tok_emb {
                used_rows[rng.gen_range(0..used_rows.len())]
            } else if ti == adapter.composer {
                [Composer::Bach, Composer::Chopin][rng.gen_range(0..2)].index()
            } else {
                rng.gen_range(0..rows)
            };
            picks.push((ti, r, rng.gen_range(0..cols)));
        }
    }
    assert!(picks.len() >= 500);
    assert!(picks.iter().any(|p| model.params.specs[p.0].group == Group::Adapter));

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &(ti, r, c) in &picks {
        let orig = model.params.tensors[ti][[r, c]];
        model.params.tensors[ti][[r, c]] = orig + h;
        let up = model.loss(&batch).unwrap();
        model.params.tensors[ti][[r, c]] = orig - h;
        let down = model.loss(&batch).unwrap();
        model.params.tensors[ti][[r, c]] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[ti][[r, c]];
        // Floor keeps round-off in near-zero gradients from dominating.
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        assert!(rel < 1e-4, "{}[{r},{c}]: analytic {analytic:e} numeric {numeric:e}", model.params.specs[ti].name);
    }
    eprintln!("checked {} parameters, max relative error {worst:e}", picks.len());
}

#[test]
fn fresh_adapters_are_the_identity() {
    let vocab = Vocabulary::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = Model::new(ModelConfig::toy(vocab.len()), 0, &mut rng).unwrap();
    for _ in 0..50 {
        let len = rng.gen_range(1..=64);
        let composer = Composer::ALL[rng.gen_range(0..5)];
        let seq = random_sequence(&mut rng, len, composer);
        let with = model.forward_with(&seq.ids, composer, true).unwrap();
        let without = model.forward_with(&seq.ids, composer, false).unwrap();
        let diff = (&with - &without).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(diff <= 1e-6, "max difference {diff}");
    }
}

#[test]
fn logits_never_see_the_future() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let placements: [(usize, Option<Vec<usize>>); 5] = [
        (1, None),
        (2, Some(vec![1])),
        (3, None),
        (4, Some(vec![1, 3, 4])),
        (5, None),
    ];
    for (n_layers, adapter_layers) in placements {
        let config = ModelConfig {
            n_layers,
            hidden: 16,
            heads: 4,
            context: 40,
            vocab_size: 170,
            adapter_bottleneck: 4,
            rel_pos_window: 8,
            adapter_layers,
        };
        let mut model = Model::new(config, 0, &mut rng).unwrap();
        perturb(&mut model, &mut rng);
        for _ in 0..10 {
            let seq = random_sequence(&mut rng, 40, Composer::Beethoven);
            let t = rng.gen_range(0..39);
            let mut changed = seq.ids.clone();
            for id in &mut changed[t + 1..] {
                *id = rng.gen_range(0..170);
            }
            let a = model.forward(&seq.ids, seq.composer).unwrap();
            let b = model.forward(&changed, seq.composer).unwrap();
            for row in 0..=t {
                let same = a.row(row).iter().zip(b.row(row).iter()).all(|(x, y)| x.to_bits() == y.to_bits());
                assert!(same, "layers {n_layers}: row {row} changed after editing from {}", t + 1);
            }
        }
    }
}

#[test]
fn short_training_memorizes_a_small_corpus() {
    let vocab = Vocabulary::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus = synth::pretrain_corpus(50, &vocab, &mut rng);
    let mut state = TrainState::new(Model::new(ModelConfig::toy(vocab.len()), 0, &mut rng).unwrap());
    let schedule = Schedule {
        peak_lr: 3e-3,
        warmup_steps: 20,
        decay_steps: 180,
    };
    let baseline = (vocab.len() as f64).ln();
    for _ in 0..200 {
        let batch: Vec<Sequence> = (0..8).map(|_| corpus[rng.gen_range(0..corpus.len())].clone()).collect();
        state.step(&batch, &schedule, Stage::Pretrain, false, &vocab).unwrap();
    }
    let loss = state.model.loss(&corpus).unwrap();
    eprintln!("loss {loss:.4} from {baseline:.4}");
    assert!(loss <= 0.2 * baseline, "loss {loss} is not 80% below {baseline}");
}

#[test]
fn seeded_training_is_reproducible() {
    let vocab = Vocabulary::new();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let corpus = synth::finetune_corpus(3, &vocab, &mut rng);
        let mut config = ModelConfig::toy(vocab.len());
        config.hidden = 16;
        config.heads = 2;
        config.n_layers = 3;
        config.context = 128;
        let mut state = TrainState::new(Model::new(config, 0, &mut rng).unwrap());
        let schedule = Schedule {
            peak_lr: 1e-3,
            warmup_steps: 2,
            decay_steps: 10,
        };
        for _ in 0..5 {
            let batch: Vec<Sequence> = (0..2).map(|_| corpus[rng.gen_range(0..corpus.len())].clone()).collect();
            state.step(&batch, &schedule, Stage::Finetune, false, &vocab).unwrap();
        }
        checkpoint::to_bytes(&state)
    };
    assert_eq!(run(), run());
}
