use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::ModelConfig;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Main,
    Adapter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub group: Group,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerIdx {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub rel_bias: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AdapterIdx {
    /// One row per composer, `composer_dim` wide.
    pub composer: usize,
    pub down: usize,
    pub down_b: usize,
    pub up: usize,
    pub up_b: usize,
}

/// Positions of every tensor in the flat parameter list.
#[derive(Debug, Clone)]
pub struct Layout {
    pub tok_emb: usize,
    pub layers: Vec<LayerIdx>,
    /// `adapters[i]` follows layer `i` (0-based).
    pub adapters: Vec<Option<AdapterIdx>>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub w_out: usize,
    pub b_out: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

struct Builder {
    specs: Vec<TensorSpec>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, group: Group, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(TensorSpec { name, group, rows, cols });
        self.inits.push(init);
        self.specs.len() - 1
    }
}

/// Builds the tensor declarations for a config. The order here is the
/// checkpoint order.
fn declare(config: &ModelConfig) -> (Vec<TensorSpec>, Vec<Init>, Layout) {
    use Group::*;
    use Init::*;
    let h = config.hidden;
    let f = 4 * h;
    let mut b = Builder {
        specs: Vec::new(),
        inits: Vec::new(),
    };
    let tok_emb = b.add("tok_emb".into(), Main, config.vocab_size, h, Normal);
    let placement = config.adapter_placement();
    let mut layers = Vec::new();
    let mut adapters = Vec::new();
    for l in 0..config.n_layers {
        let p = |s: &str| format!("layer{l}.{s}");
        let idx = LayerIdx {
            ln1_g: b.add(p("ln1_g"), Main, 1, h, Ones),
            ln1_b: b.add(p("ln1_b"), Main, 1, h, Zeros),
            wq: b.add(p("wq"), Main, h, h, Normal),
            bq: b.add(p("bq"), Main, 1, h, Zeros),
            wk: b.add(p("wk"), Main, h, h, Normal),
            bk: b.add(p("bk"), Main, 1, h, Zeros),
            wv: b.add(p("wv"), Main, h, h, Normal),
            bv: b.add(p("bv"), Main, 1, h, Zeros),
            wo: b.add(p("wo"), Main, h, h, Normal),
            bo: b.add(p("bo"), Main, 1, h, Zeros),
            rel_bias: b.add(p("rel_bias"), Main, config.heads, config.rel_pos_window + 1, Zeros),
            ln2_g: b.add(p("ln2_g"), Main, 1, h, Ones),
            ln2_b: b.add(p("ln2_b"), Main, 1, h, Zeros),
            w1: b.add(p("w1"), Main, h, f, Normal),
            b1: b.add(p("b1"), Main, 1, f, Zeros),
            w2: b.add(p("w2"), Main, f, h, Normal),
            b2: b.add(p("b2"), Main, 1, h, Zeros),
        };
        layers.push(idx);
        let adapter = placement.contains(&(l + 1)).then(|| {
            let c = config.composer_dim();
            let k = config.adapter_bottleneck;
            let p = |s: &str| format!("adapter{}.{s}", l + 1);
            AdapterIdx {
                composer: b.add(p("composer"), Adapter, 5, c, Normal),
                down: b.add(p("down"), Adapter, h + c, k, Normal),
                down_b: b.add(p("down_b"), Adapter, 1, k, Zeros),
                up: b.add(p("up"), Adapter, k, h, Zeros),
                up_b: b.add(p("up_b"), Adapter, 1, h, Zeros),
            }
        });
        adapters.push(adapter);
    }
    let layout = Layout {
        tok_emb,
        layers,
        adapters,
        lnf_g: b.add("lnf_g".into(), Main, 1, h, Ones),
        lnf_b: b.add("lnf_b".into(), Main, 1, h, Zeros),
        w_out: b.add("w_out".into(), Main, h, config.vocab_size, Normal),
        b_out: b.add("b_out".into(), Main, 1, config.vocab_size, Zeros),
    };
    (b.specs, b.inits, layout)
}

#[derive(Debug, Clone)]
pub struct Params {
    pub tensors: Vec<Array2<f64>>,
    pub specs: Vec<TensorSpec>,
    pub layout: Layout,
}

impl Params {
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let (specs, inits, layout) = declare(config);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let tensors = specs
            .iter()
            .zip(&inits)
            .map(|(s, init)| match init {
                Init::Normal => Array2::from_shape_simple_fn((s.rows, s.cols), || normal.sample(rng)),
                Init::Zeros => Array2::zeros((s.rows, s.cols)),
                Init::Ones => Array2::ones((s.rows, s.cols)),
            })
            .collect();
        Params { tensors, specs, layout }
    }

    /// Shapes and layout only, every tensor zero.
    pub fn zeros(config: &ModelConfig) -> Self {
        let (specs, _, layout) = declare(config);
        let tensors = specs.iter().map(|s| Array2::zeros((s.rows, s.cols))).collect();
        Params { tensors, specs, layout }
    }

    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_and_init_contract() {
        let config = ModelConfig::toy(170);
        let p = Params::init(&config, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p.layout.layers.len(), 4);
        let placed: Vec<usize> = (0..4).filter(|&l| p.layout.adapters[l].is_some()).map(|l| l + 1).collect();
        assert_eq!(placed, vec![2]);
        let a = p.layout.adapters[1].unwrap();
        assert!(p.tensors[a.up].iter().all(|&x| x == 0.0));
        assert!(p.tensors[a.up_b].iter().all(|&x| x == 0.0));
        assert_eq!(p.tensors[a.down].dim(), (64 + 16, 16));
        assert_eq!(p.tensors[a.composer].dim(), (5, 16));
        assert_eq!(p.specs[a.down].group, Group::Adapter);
        assert_eq!(p.tensors[p.layout.tok_emb].dim(), (170, 64));
        let names: std::collections::HashSet<_> = p.specs.iter().map(|s| &s.name).collect();
        assert_eq!(names.len(), p.specs.len());
    }
}
