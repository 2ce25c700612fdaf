//! Pre-LN decoder: token embedding, causal self-attention with a clipped
//! relative bias, GELU feed-forward, optional composer adapters, final norm
//! and output projection.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use remiforge_core::Composer;

use crate::config::ModelConfig;
use crate::params::Params;
use crate::NeuralError;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// A token-id sequence together with the composer fed to the adapters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub ids: Vec<u32>,
    pub composer: Composer,
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * *inv);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
fn layer_norm_backward(dy: &Array2<f64>, cache: &LnCache, g: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let n = dy.ncols() as f64;
    let dg = (dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * g;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_d = dh.sum() / n;
        let mean_dx = dh.dot(&xh) / n;
        let inv = cache.inv_std[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = inv * (dh[j] - mean_d - xh[j] * mean_dx);
        }
    }
    (dx, dg, db)
}

fn row_sum(m: &Array2<f64>) -> Array2<f64> {
    m.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Keys and values of every position processed so far, row-major.
#[derive(Debug, Clone, Default)]
struct LayerKv {
    k: Vec<f64>,
    v: Vec<f64>,
}

struct AttnGeometry<'a> {
    heads: usize,
    window: usize,
    rel: &'a Array2<f64>,
    key_ok: &'a [bool],
}

/// Causal attention for `q.nrows()` queries starting at position `offset`.
/// Query `i` sees keys `0..=offset + i`. Returns the head-concatenated output
/// and per-head probability rows.
fn attend(q: &Array2<f64>, keys: &[f64], values: &[f64], offset: usize, geo: &AttnGeometry) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (n, h) = q.dim();
    let dh = h / geo.heads;
    let m = offset + n;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((n, h));
    let mut probs = vec![Array2::zeros((n, m)); geo.heads];
    for (hd, p) in probs.iter_mut().enumerate() {
        let c0 = hd * dh;
        for i in 0..n {
            let pos = offset + i;
            let qi = q.slice(s![i, c0..c0 + dh]);
            let mut max = f64::NEG_INFINITY;
            for j in 0..=pos {
                if !geo.key_ok[j] {
                    continue;
                }
                let kj = &keys[j * h + c0..j * h + c0 + dh];
                let mut score = 0.0;
                for d in 0..dh {
                    score += qi[d] * kj[d];
                }
                score = score * scale + geo.rel[[hd, (pos - j).min(geo.window)]];
                p[[i, j]] = score;
                max = max.max(score);
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for j in 0..=pos {
                if geo.key_ok[j] {
                    let e = (p[[i, j]] - max).exp();
                    p[[i, j]] = e;
                    sum += e;
                }
            }
            for j in 0..=pos {
                if geo.key_ok[j] {
                    let w = p[[i, j]] / sum;
                    p[[i, j]] = w;
                    let vj = &values[j * h + c0..j * h + c0 + dh];
                    for d in 0..dh {
                        out[[i, c0 + d]] += w * vj[d];
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Full-sequence attention backward. Returns `(dq, dk, dv, drel)`.
fn attend_backward(
    dout: &Array2<f64>,
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    probs: &[Array2<f64>],
    geo: &AttnGeometry,
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let (n, h) = q.dim();
    let dh = h / geo.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros((n, h));
    let mut dk = Array2::zeros((n, h));
    let mut dv = Array2::zeros((n, h));
    let mut drel = Array2::zeros(geo.rel.raw_dim());
    let mut dp = vec![0.0; n];
    for (hd, p) in probs.iter().enumerate() {
        let c0 = hd * dh;
        for i in 0..n {
            let mut dot = 0.0;
            for j in 0..=i {
                if !geo.key_ok[j] {
                    continue;
                }
                let mut g = 0.0;
                for d in 0..dh {
                    g += dout[[i, c0 + d]] * v[[j, c0 + d]];
                }
                dp[j] = g;
                dot += p[[i, j]] * g;
            }
            for j in 0..=i {
                if !geo.key_ok[j] {
                    continue;
                }
                let pij = p[[i, j]];
                let ds = pij * (dp[j] - dot);
                drel[[hd, (i - j).min(geo.window)]] += ds;
                for d in 0..dh {
                    dv[[j, c0 + d]] += pij * dout[[i, c0 + d]];
                    dq[[i, c0 + d]] += ds * k[[j, c0 + d]] * scale;
                    dk[[j, c0 + d]] += ds * q[[i, c0 + d]] * scale;
                }
            }
        }
    }
    (dq, dk, dv, drel)
}

struct AdapterCache {
    z: Array2<f64>,
    d: Array2<f64>,
    gd: Array2<f64>,
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    a2: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
    adapter: Option<AdapterCache>,
}

struct ForwardCache {
    ids: Vec<u32>,
    composer: Composer,
    key_ok: Vec<bool>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    y: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    pad_id: u32,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, pad_id: u32, rng: &mut R) -> Result<Self, NeuralError> {
        config.validate()?;
        let params = Params::init(&config, rng);
        Ok(Model { config, params, pad_id })
    }

    pub fn from_params(config: ModelConfig, params: Params, pad_id: u32) -> Result<Self, NeuralError> {
        config.validate()?;
        Ok(Model { config, params, pad_id })
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    fn check_ids(&self, ids: &[u32], offset: usize) -> Result<(), NeuralError> {
        if offset + ids.len() > self.config.context {
            return Err(NeuralError::ContextOverflow {
                len: offset + ids.len(),
                context: self.config.context,
            });
        }
        match ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            Some(&id) => Err(NeuralError::UnknownToken(id)),
            None => Ok(()),
        }
    }

    fn embed(&self, ids: &[u32]) -> Array2<f64> {
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        self.params.tensors[self.params.layout.tok_emb].select(Axis(0), &idx)
    }

    fn layer(
        &self,
        l: usize,
        x: Array2<f64>,
        offset: usize,
        kv: &mut LayerKv,
        key_ok: &[bool],
        adapter_composer: Option<Composer>,
        record: bool,
    ) -> (Array2<f64>, Option<LayerCache>) {
        let t = &self.params.tensors;
        let lw = self.params.layout.layers[l];
        let (a, ln1) = layer_norm(&x, &t[lw.ln1_g], &t[lw.ln1_b]);
        let q = a.dot(&t[lw.wq]) + &t[lw.bq];
        let k = a.dot(&t[lw.wk]) + &t[lw.bk];
        let v = a.dot(&t[lw.wv]) + &t[lw.bv];
        kv.k.extend(k.iter());
        kv.v.extend(v.iter());
        let geo = AttnGeometry {
            heads: self.config.heads,
            window: self.config.rel_pos_window,
            rel: &t[lw.rel_bias],
            key_ok,
        };
        let (o, probs) = attend(&q, &kv.k, &kv.v, offset, &geo);
        let x1 = x + &(o.dot(&t[lw.wo]) + &t[lw.bo]);
        let (a2, ln2) = layer_norm(&x1, &t[lw.ln2_g], &t[lw.ln2_b]);
        let u = a2.dot(&t[lw.w1]) + &t[lw.b1];
        let g = u.mapv(gelu);
        let mut out = x1 + &(g.dot(&t[lw.w2]) + &t[lw.b2]);
        let mut adapter_cache = None;
        if let (Some(ai), Some(composer)) = (self.params.layout.adapters[l], adapter_composer) {
            let n = out.nrows();
            let h = self.config.hidden;
            let c = self.config.composer_dim();
            let e = t[ai.composer].row(composer.index());
            let mut z = Array2::zeros((n, h + c));
            z.slice_mut(s![.., ..h]).assign(&out);
            z.slice_mut(s![.., h..]).assign(&e.broadcast((n, c)).expect("row broadcast"));
            let d = z.dot(&t[ai.down]) + &t[ai.down_b];
            let gd = d.mapv(gelu);
            out = out + &(gd.dot(&t[ai.up]) + &t[ai.up_b]);
            if record {
                adapter_cache = Some(AdapterCache { z, d, gd });
            }
        }
        let cache = record.then(|| LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            o,
            ln2,
            a2,
            u,
            g,
            adapter: adapter_cache,
        });
        (out, cache)
    }

    fn head(&self, x: &Array2<f64>) -> (Array2<f64>, LnCache, Array2<f64>) {
        let t = &self.params.tensors;
        let lay = &self.params.layout;
        let (y, lnf) = layer_norm(x, &t[lay.lnf_g], &t[lay.lnf_b]);
        let logits = y.dot(&t[lay.w_out]) + &t[lay.b_out];
        (logits, lnf, y)
    }

    /// Logits for every position, shape `(ids.len(), vocab_size)`.
    pub fn forward(&self, ids: &[u32], composer: Composer) -> Result<Array2<f64>, NeuralError> {
        self.forward_with(ids, composer, true)
    }

    /// Forward pass with the adapters optionally bypassed.
    pub fn forward_with(&self, ids: &[u32], composer: Composer, use_adapters: bool) -> Result<Array2<f64>, NeuralError> {
        self.check_ids(ids, 0)?;
        let mut state = DecodeState::new(self, composer);
        state.use_adapters = use_adapters;
        Ok(state.run(ids))
    }

    fn forward_cached(&self, ids: &[u32], composer: Composer) -> (Array2<f64>, ForwardCache) {
        let key_ok: Vec<bool> = ids.iter().map(|&id| id != self.pad_id).collect();
        let mut x = self.embed(ids);
        let mut layers = Vec::with_capacity(self.config.n_layers);
        for l in 0..self.config.n_layers {
            let mut kv = LayerKv::default();
            let (out, cache) = self.layer(l, x, 0, &mut kv, &key_ok, Some(composer), true);
            x = out;
            layers.push(cache.expect("recorded"));
        }
        let (logits, lnf, y) = self.head(&x);
        let cache = ForwardCache {
            ids: ids.to_vec(),
            composer,
            key_ok,
            layers,
            lnf,
            y,
        };
        (logits, cache)
    }

    fn backward(&self, cache: &ForwardCache, dlogits: &Array2<f64>, grads: &mut [Array2<f64>]) {
        let t = &self.params.tensors;
        let lay = &self.params.layout;
        let h = self.config.hidden;
        grads[lay.w_out] += &cache.y.t().dot(dlogits);
        grads[lay.b_out] += &row_sum(dlogits);
        let dy = dlogits.dot(&t[lay.w_out].t());
        let (mut dx, dg, db) = layer_norm_backward(&dy, &cache.lnf, &t[lay.lnf_g]);
        grads[lay.lnf_g] += &dg;
        grads[lay.lnf_b] += &db;

        for l in (0..self.config.n_layers).rev() {
            let lc = &cache.layers[l];
            let lw = lay.layers[l];
            if let (Some(ai), Some(ac)) = (lay.adapters[l], &lc.adapter) {
                grads[ai.up] += &ac.gd.t().dot(&dx);
                grads[ai.up_b] += &row_sum(&dx);
                let dd = dx.dot(&t[ai.up].t()) * &ac.d.mapv(gelu_grad);
                grads[ai.down] += &ac.z.t().dot(&dd);
                grads[ai.down_b] += &row_sum(&dd);
                let dz = dd.dot(&t[ai.down].t());
                dx += &dz.slice(s![.., ..h]);
                let de = dz.slice(s![.., h..]).sum_axis(Axis(0));
                let mut row = grads[ai.composer].row_mut(cache.composer.index());
                row += &de;
            }

            grads[lw.w2] += &lc.g.t().dot(&dx);
            grads[lw.b2] += &row_sum(&dx);
            let du = dx.dot(&t[lw.w2].t()) * &lc.u.mapv(gelu_grad);
            grads[lw.w1] += &lc.a2.t().dot(&du);
            grads[lw.b1] += &row_sum(&du);
            let da2 = du.dot(&t[lw.w1].t());
            let (dx_ln2, dg, db) = layer_norm_backward(&da2, &lc.ln2, &t[lw.ln2_g]);
            grads[lw.ln2_g] += &dg;
            grads[lw.ln2_b] += &db;
            let dx1 = dx + &dx_ln2;

            grads[lw.wo] += &lc.o.t().dot(&dx1);
            grads[lw.bo] += &row_sum(&dx1);
            let d_o = dx1.dot(&t[lw.wo].t());
            let geo = AttnGeometry {
                heads: self.config.heads,
                window: self.config.rel_pos_window,
                rel: &t[lw.rel_bias],
                key_ok: &cache.key_ok,
            };
            let (dq, dk, dv, drel) = attend_backward(&d_o, &lc.q, &lc.k, &lc.v, &lc.probs, &geo);
            grads[lw.rel_bias] += &drel;
            grads[lw.wq] += &lc.a.t().dot(&dq);
            grads[lw.bq] += &row_sum(&dq);
            grads[lw.wk] += &lc.a.t().dot(&dk);
            grads[lw.bk] += &row_sum(&dk);
            grads[lw.wv] += &lc.a.t().dot(&dv);
            grads[lw.bv] += &row_sum(&dv);
            let da = dq.dot(&t[lw.wq].t()) + dk.dot(&t[lw.wk].t()) + dv.dot(&t[lw.wv].t());
            let (dx_ln1, dg, db) = layer_norm_backward(&da, &lc.ln1, &t[lw.ln1_g]);
            grads[lw.ln1_g] += &dg;
            grads[lw.ln1_b] += &db;
            dx = dx1 + &dx_ln1;
        }

        let emb = &mut grads[lay.tok_emb];
        for (i, &id) in cache.ids.iter().enumerate() {
            let mut row = emb.row_mut(id as usize);
            row += &dx.row(i);
        }
    }

    /// Validates a batch and returns each sequence trimmed of trailing pads,
    /// plus the total number of scored targets.
    fn prepare<'a>(&self, batch: &'a [Sequence]) -> Result<(Vec<&'a [u32]>, usize), NeuralError> {
        if batch.is_empty() {
            return Err(NeuralError::EmptyBatch);
        }
        let mut trimmed = Vec::with_capacity(batch.len());
        let mut targets = 0;
        for seq in batch {
            self.check_ids(&seq.ids, 0)?;
            let end = seq.ids.iter().rposition(|&id| id != self.pad_id).map_or(0, |i| i + 1);
            let ids = &seq.ids[..end];
            targets += ids.iter().skip(1).filter(|&&id| id != self.pad_id).count();
            trimmed.push(ids);
        }
        if targets == 0 {
            return Err(NeuralError::AllPadBatch);
        }
        Ok((trimmed, targets))
    }

    /// Per-row cross-entropy and its gradient with respect to the logits,
    /// both already divided by `norm`.
    fn cross_entropy(&self, logits: &Array2<f64>, ids: &[u32], norm: f64) -> (f64, Array2<f64>) {
        let mut dlogits = Array2::zeros(logits.raw_dim());
        let mut loss = 0.0;
        for tpos in 0..ids.len().saturating_sub(1) {
            let target = ids[tpos + 1];
            if target == self.pad_id {
                continue;
            }
            let row = logits.row(tpos);
            let probs = softmax(row);
            loss -= probs[target as usize].ln();
            let mut d = dlogits.row_mut(tpos);
            d.assign(&probs);
            d[target as usize] -= 1.0;
            d /= norm;
        }
        (loss / norm, dlogits)
    }

    /// Mean next-token cross-entropy over non-pad targets.
    pub fn loss(&self, batch: &[Sequence]) -> Result<f64, NeuralError> {
        let (trimmed, targets) = self.prepare(batch)?;
        let mut total = 0.0;
        for (ids, seq) in trimmed.iter().zip(batch) {
            if ids.len() < 2 {
                continue;
            }
            let logits = self.forward(ids, seq.composer)?;
            total += self.cross_entropy(&logits, ids, targets as f64).0;
        }
        Ok(total)
    }

    /// Loss and gradients for every parameter tensor.
    pub fn loss_and_grad(&self, batch: &[Sequence]) -> Result<(f64, Vec<Array2<f64>>), NeuralError> {
        let (trimmed, targets) = self.prepare(batch)?;
        let mut grads = self.params.zeros_like();
        let mut total = 0.0;
        for (ids, seq) in trimmed.iter().zip(batch) {
            if ids.len() < 2 {
                continue;
            }
            let (logits, cache) = self.forward_cached(ids, seq.composer);
            let (loss, dlogits) = self.cross_entropy(&logits, ids, targets as f64);
            total += loss;
            self.backward(&cache, &dlogits, &mut grads);
        }
        Ok((total, grads))
    }
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut e = logits.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e /= sum;
    e
}

/// Incremental decoding state: keys and values of the consumed prefix.
pub struct DecodeState<'a> {
    model: &'a Model,
    composer: Composer,
    use_adapters: bool,
    kv: Vec<LayerKv>,
    key_ok: Vec<bool>,
}

impl<'a> DecodeState<'a> {
    pub fn new(model: &'a Model, composer: Composer) -> Self {
        DecodeState {
            model,
            composer,
            use_adapters: true,
            kv: vec![LayerKv::default(); model.config.n_layers],
            key_ok: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.key_ok.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key_ok.is_empty()
    }

    /// Consumes `ids` and returns their logits.
    pub fn feed(&mut self, ids: &[u32]) -> Result<Array2<f64>, NeuralError> {
        self.model.check_ids(ids, self.len())?;
        Ok(self.run(ids))
    }

    fn run(&mut self, ids: &[u32]) -> Array2<f64> {
        let offset = self.len();
        self.key_ok.extend(ids.iter().map(|&id| id != self.model.pad_id));
        let mut x = self.model.embed(ids);
        let composer = self.use_adapters.then_some(self.composer);
        for l in 0..self.model.config.n_layers {
            x = self.model.layer(l, x, offset, &mut self.kv[l], &self.key_ok, composer, false).0;
        }
        self.model.head(&x).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            hidden: 8,
            heads: 2,
            context: 16,
            vocab_size: 11,
            adapter_bottleneck: 3,
            rel_pos_window: 4,
            adapter_layers: Some(vec![1]),
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn logits_shape_and_softmax_sum() {
        let m = Model::new(tiny(), 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let logits = m.forward(&[1, 2, 3, 4, 5], Composer::Bach).unwrap();
        assert_eq!(logits.dim(), (5, 11));
        for row in logits.rows() {
            assert!((softmax(row).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn incremental_decoding_matches_full_pass() {
        let m = Model::new(tiny(), 0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let ids = [3, 1, 4, 1, 5, 9, 2, 6];
        let full = m.forward(&ids, Composer::Chopin).unwrap();
        let mut st = DecodeState::new(&m, Composer::Chopin);
        let a = st.feed(&ids[..3]).unwrap();
        let mut rows = vec![a];
        for &id in &ids[3..] {
            rows.push(st.feed(&[id]).unwrap());
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let inc = ndarray::concatenate(Axis(0), &views).unwrap();
        assert!((&inc - &full).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn rejects_overflow_and_unknown_ids() {
        let m = Model::new(tiny(), 0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(matches!(m.forward(&[1; 17], Composer::Bach), Err(NeuralError::ContextOverflow { .. })));
        assert!(matches!(m.forward(&[1, 11], Composer::Bach), Err(NeuralError::UnknownToken(11))));
    }

    #[test]
    fn loss_contracts() {
        let m = Model::new(tiny(), 0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let seq = Sequence {
            ids: vec![1, 2, 3, 4, 0, 0],
            composer: Composer::Unspecified,
        };
        let one = m.loss(std::slice::from_ref(&seq)).unwrap();
        let two = m.loss(&[seq.clone(), seq.clone()]).unwrap();
        assert!((one - two).abs() < 1e-12);
        let pads = Sequence {
            ids: vec![0; 6],
            composer: Composer::Unspecified,
        };
        assert!(matches!(m.loss(&[pads]), Err(NeuralError::AllPadBatch)));
        assert!(matches!(m.loss(&[]), Err(NeuralError::EmptyBatch)));

        // Zeroed output weights give uniform logits.
        let mut flat = m.clone();
        let lay = flat.params.layout.clone();
        flat.params.tensors[lay.w_out].fill(0.0);
        let uniform = flat.loss(&[seq]).unwrap();
        assert!((uniform - 11f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn trailing_pads_do_not_change_the_loss() {
        let m = Model::new(tiny(), 0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let short = Sequence {
            ids: vec![1, 2, 3, 4],
            composer: Composer::Bach,
        };
        let padded = Sequence {
            ids: vec![1, 2, 3, 4, 0, 0, 0],
            composer: Composer::Bach,
        };
        assert_eq!(m.loss(&[short]).unwrap(), m.loss(&[padded]).unwrap());
    }
}
