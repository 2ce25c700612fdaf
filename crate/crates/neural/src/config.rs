use serde::{Deserialize, Serialize};

use crate::NeuralError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub context: usize,
    pub vocab_size: usize,
    pub adapter_bottleneck: usize,
    /// Relative distances beyond this share one bias entry.
    pub rel_pos_window: usize,
    /// Explicit 1-based adapter placement. When absent, adapters follow every
    /// even layer except the last.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter_layers: Option<Vec<usize>>,
}

impl ModelConfig {
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            hidden: 64,
            heads: 4,
            context: 256,
            vocab_size,
            adapter_bottleneck: 16,
            rel_pos_window: 64,
            adapter_layers: None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn composer_dim(&self) -> usize {
        (self.hidden / 4).max(1)
    }

    /// 1-based indices of the layers followed by an adapter.
    pub fn adapter_placement(&self) -> Vec<usize> {
        match &self.adapter_layers {
            Some(layers) => layers.clone(),
            None => (1..self.n_layers).filter(|l| l % 2 == 0).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |msg: String| Err(NeuralError::InvalidConfig(msg));
        if self.n_layers == 0 || self.hidden == 0 || self.heads == 0 || self.vocab_size == 0 {
            return bad("n_layers, hidden, heads and vocab_size must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return bad(format!("hidden {} is not divisible by heads {}", self.hidden, self.heads));
        }
        if self.context < 4 {
            return bad(format!("context {} is below 4", self.context));
        }
        if self.adapter_bottleneck == 0 {
            return bad("adapter_bottleneck must be positive".into());
        }
        if let Some(layers) = &self.adapter_layers {
            let mut seen = layers.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != layers.len() || layers.iter().any(|&l| l == 0 || l > self.n_layers) {
                return bad(format!("adapter layers {layers:?} must be distinct and within 1..={}", self.n_layers));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub p: f64,
    pub temperature: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            p: 0.99,
            temperature: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(NeuralError::InvalidConfig(format!("p = {} is outside (0, 1]", self.p)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(NeuralError::InvalidConfig(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Linear warmup from zero, then cosine decay to a tenth of the peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
}

impl Schedule {
    pub const FLOOR_RATIO: f64 = 0.1;

    pub fn full_scale_pretrain() -> Self {
        Schedule {
            peak_lr: 1e-4,
            warmup_steps: 1000,
            decay_steps: 500_000,
        }
    }

    pub fn full_scale_finetune() -> Self {
        Schedule {
            peak_lr: 1e-5,
            warmup_steps: 500,
            decay_steps: 500_000,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        let floor = self.peak_lr * Self::FLOOR_RATIO;
        let progress = if self.decay_steps == 0 {
            1.0
        } else {
            ((step - self.warmup_steps) as f64 / self.decay_steps as f64).min(1.0)
        };
        floor + (self.peak_lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
