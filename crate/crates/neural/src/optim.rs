use ndarray::Array2;
use remiforge_core::corpus::Stage;
use remiforge_core::remi::{Token, Vocabulary};
use remiforge_core::Composer;

use crate::config::Schedule;
use crate::model::{Model, Sequence};
use crate::params::{Group, Params};
use crate::NeuralError;

/// Gradient-norm ceiling for backbone parameters.
pub const MAIN_CLIP: f64 = 0.5;
/// Gradient-norm ceiling for adapter parameters.
pub const ADAPTER_CLIP: f64 = 2.0;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub fn group_norm(grads: &[Array2<f64>], params: &Params, group: Group) -> f64 {
    grads
        .iter()
        .zip(&params.specs)
        .filter(|(_, s)| s.group == group)
        .map(|(g, _)| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales one group's gradients so their joint norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_group(grads: &mut [Array2<f64>], params: &Params, group: Group, max_norm: f64) -> f64 {
    let norm = group_norm(grads, params, group);
    if norm > max_norm {
        let scale = max_norm / norm;
        for (g, s) in grads.iter_mut().zip(&params.specs) {
            if s.group == group {
                *g *= scale;
            }
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &Params) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut Params, grads: &[Array2<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for (((p, g), m), v) in params.tensors.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            });
        }
    }
}

/// Zeroes gradients of parameters that the stage does not train. Pretraining
/// leaves the adapters at their identity initialization; fine-tuning touches
/// only the adapters and the composer-token embeddings unless `full` is set.
pub fn freeze(grads: &mut [Array2<f64>], params: &Params, stage: Stage, full: bool, vocab: &Vocabulary) {
    match stage {
        Stage::Pretrain => {
            for (g, s) in grads.iter_mut().zip(&params.specs) {
                if s.group == Group::Adapter {
                    g.fill(0.0);
                }
            }
        }
        Stage::Finetune if full => {}
        Stage::Finetune => {
            let composer_rows: Vec<usize> = Composer::ALL
                .iter()
                .map(|&c| vocab.id(Token::Composer(c)).expect("composer token") as usize)
                .collect();
            let emb = params.layout.tok_emb;
            for (i, (g, s)) in grads.iter_mut().zip(&params.specs).enumerate() {
                if s.group == Group::Adapter {
                    continue;
                }
                if i == emb {
                    for (r, mut row) in g.rows_mut().into_iter().enumerate() {
                        if !composer_rows.contains(&r) {
                            row.fill(0.0);
                        }
                    }
                } else {
                    g.fill(0.0);
                }
            }
        }
    }
}

/// A model with its optimizer state and step counter.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub adam: Adam,
    pub step: u64,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        let adam = Adam::new(&model.params);
        TrainState { model, adam, step: 0 }
    }

    /// Starts a new stage: fresh optimizer moments and step counter.
    pub fn restart(self) -> Self {
        TrainState::new(self.model)
    }

    /// One optimizer step. Returns the batch loss before the update.
    pub fn step(
        &mut self,
        batch: &[Sequence],
        schedule: &Schedule,
        stage: Stage,
        full_finetune: bool,
        vocab: &Vocabulary,
    ) -> Result<f64, NeuralError> {
        let (loss, mut grads) = self.model.loss_and_grad(batch)?;
        if !loss.is_finite() {
            return Err(NeuralError::NonFiniteLoss { step: self.step });
        }
        freeze(&mut grads, &self.model.params, stage, full_finetune, vocab);
        clip_group(&mut grads, &self.model.params, Group::Main, MAIN_CLIP);
        clip_group(&mut grads, &self.model.params, Group::Adapter, ADAPTER_CLIP);
        let lr = schedule.lr(self.step);
        self.adam.update(&mut self.model.params, &grads, lr);
        self.step += 1;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model {
        let mut c = ModelConfig::toy(170);
        c.hidden = 8;
        c.heads = 2;
        c.n_layers = 3;
        c.context = 32;
        c.adapter_bottleneck = 2;
        Model::new(c, 0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn clipping_caps_each_group() {
        let m = model();
        let mut grads = m.params.zeros_like();
        let main = m.params.layout.w_out;
        let adapter = m.params.layout.adapters[1].unwrap().down;
        grads[main][[0, 0]] = 6.0;
        grads[main][[1, 0]] = 8.0;
        grads[adapter][[0, 0]] = 10.0;
        assert_eq!(clip_group(&mut grads, &m.params, Group::Main, MAIN_CLIP), 10.0);
        assert_eq!(clip_group(&mut grads, &m.params, Group::Adapter, ADAPTER_CLIP), 10.0);
        assert!((group_norm(&grads, &m.params, Group::Main) - 0.5).abs() < 1e-12);
        assert!((group_norm(&grads, &m.params, Group::Adapter) - 2.0).abs() < 1e-12);

        let mut small = m.params.zeros_like();
        small[main][[0, 0]] = 0.1;
        clip_group(&mut small, &m.params, Group::Main, MAIN_CLIP);
        assert_eq!(small[main][[0, 0]], 0.1);
    }

    #[test]
    fn finetune_touches_only_adapters_and_composer_rows() {
        let vocab = Vocabulary::new();
        let mut st = TrainState::new(model());
        let before = st.model.params.clone();
        let batch = [Sequence {
            ids: vec![6, 11, 1, 3, 15, 18, 100, 160, 0],
            composer: Composer::Mozart,
        }];
        let schedule = Schedule {
            peak_lr: 1e-2,
            warmup_steps: 0,
            decay_steps: 10,
        };
        for _ in 0..3 {
            st.step(&batch, &schedule, Stage::Finetune, false, &vocab).unwrap();
        }
        let composer_rows: Vec<usize> = Composer::ALL
            .iter()
            .map(|&c| vocab.id(Token::Composer(c)).unwrap() as usize)
            .collect();
        let mozart = vocab.id(Token::Composer(Composer::Mozart)).unwrap() as usize;
        for (i, spec) in st.model.params.specs.iter().enumerate() {
            let (a, b) = (&before.tensors[i], &st.model.params.tensors[i]);
            if spec.group == Group::Adapter {
                continue;
            }
            if i == st.model.params.layout.tok_emb {
                for r in 0..a.nrows() {
                    if !composer_rows.contains(&r) {
                        assert_eq!(a.row(r), b.row(r), "row {r}");
                    }
                }
                assert_ne!(a.row(mozart), b.row(mozart));
            } else {
                assert_eq!(a, b, "{}", spec.name);
            }
        }
        let up = st.model.params.layout.adapters[1].unwrap().up;
        assert_ne!(before.tensors[up], st.model.params.tensors[up]);
    }

    #[test]
    fn pretraining_leaves_adapters_at_identity() {
        let vocab = Vocabulary::new();
        let mut st = TrainState::new(model());
        let before = st.model.params.clone();
        let batch = [Sequence {
            ids: vec![4, 11, 1, 3, 15, 18, 100, 160, 2],
            composer: Composer::Unspecified,
        }];
        let schedule = Schedule {
            peak_lr: 1e-2,
            warmup_steps: 1,
            decay_steps: 10,
        };
        for _ in 0..3 {
            st.step(&batch, &schedule, Stage::Pretrain, false, &vocab).unwrap();
        }
        for (i, spec) in st.model.params.specs.iter().enumerate() {
            if spec.group == Group::Adapter {
                assert_eq!(before.tensors[i], st.model.params.tensors[i]);
            }
        }
        assert_ne!(before.tensors[st.model.params.layout.w_out], st.model.params.tensors[st.model.params.layout.w_out]);
    }
}
