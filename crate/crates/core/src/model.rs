//! Decoder-only transformer with one mutable dropout rate shared by every
//! dropout site.
//!
//! Layout per block (pre-norm, GPT-2 naming):
//!
//! ```text
//! x = drop_emb(wte[ids] + wpe[pos])
//! x = x + resid_drop(c_proj(attn_drop(softmax(causal(q·kᵀ/√d)))·v))   // on ln_1(x)
//! x = x + mlp_drop(c_proj(gelu(c_fc(ln_2(x)))))
//! logits = ln_f(x) · wteᵀ                                             // tied head
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{check_rate, Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::rng::RngState;
use crate::tensor::{Tensor, TokenBatch};

const INIT_STD: f64 = 0.02;
const INIT_STREAM: u64 = 0x1417;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layer: usize,
    pub n_head: usize,
    pub n_embd: usize,
    pub block_size: usize,
    pub vocab_size: usize,
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layer: 6,
            n_head: 6,
            n_embd: 384,
            block_size: 256,
            vocab_size: 65,
            dropout_p: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layer == 0 || self.n_head == 0 || self.n_embd == 0 {
            return bad("n_layer, n_head and n_embd must be at least 1".into());
        }
        if !self.n_embd.is_multiple_of(self.n_head) {
            return bad(format!("n_embd={} is not divisible by n_head={}", self.n_embd, self.n_head));
        }
        if self.block_size < 2 {
            return bad(format!("block_size={} must be at least 2", self.block_size));
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size={} must be at least 2", self.vocab_size));
        }
        if check_rate(self.dropout_p).is_err() {
            return bad(format!("dropout_p={} must lie in [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    /// Embedding dropout plus three sites per block.
    pub fn dropout_sites(&self) -> usize {
        1 + 3 * self.n_layer
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropoutSite {
    pub path: String,
    pub rate: f64,
}

/// Output of one forward pass. Owns the recorded graph so the caller can
/// back-propagate from `loss`.
pub struct Forward {
    pub graph: Graph,
    pub logits: Var,
    pub loss: Option<Var>,
}

impl Forward {
    pub fn logits(&self) -> &Tensor {
        self.graph.value(self.logits)
    }

    pub fn loss_value(&self) -> Option<f64> {
        self.loss.map(|l| self.graph.scalar(l))
    }
}

#[derive(Clone, Debug)]
pub struct GptModel {
    config: ModelConfig,
    pub params: ParamStore,
    sites: Vec<DropoutSite>,
    current_dropout: f64,
    update_calls: u64,
}

fn block_param(layer: usize, name: &str) -> String {
    format!("h.{layer}.{name}")
}

impl GptModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<GptModel> {
        config.validate()?;
        let mut rng = RngState::new(seed, INIT_STREAM);
        let c = config.n_embd;
        let proj_std = INIT_STD / ((2 * config.n_layer) as f64).sqrt();
        let mut normal = |shape: &[usize], std: f64| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| (rng.normal() * std) as f32).collect();
            Tensor::new(shape, data).expect("shape matches")
        };
        let mut params = ParamStore::new();
        params.insert("wte", normal(&[config.vocab_size, c], INIT_STD));
        params.insert("wpe", normal(&[config.block_size, c], INIT_STD));
        for l in 0..config.n_layer {
            params.insert(block_param(l, "ln_1.weight"), Tensor::ones(&[c]));
            params.insert(block_param(l, "ln_1.bias"), Tensor::zeros(&[c]));
            params.insert(block_param(l, "attn.c_attn.weight"), normal(&[c, 3 * c], INIT_STD));
            params.insert(block_param(l, "attn.c_attn.bias"), Tensor::zeros(&[3 * c]));
            params.insert(block_param(l, "attn.c_proj.weight"), normal(&[c, c], proj_std));
            params.insert(block_param(l, "attn.c_proj.bias"), Tensor::zeros(&[c]));
            params.insert(block_param(l, "ln_2.weight"), Tensor::ones(&[c]));
            params.insert(block_param(l, "ln_2.bias"), Tensor::zeros(&[c]));
            params.insert(block_param(l, "mlp.c_fc.weight"), normal(&[c, 4 * c], INIT_STD));
            params.insert(block_param(l, "mlp.c_fc.bias"), Tensor::zeros(&[4 * c]));
            params.insert(block_param(l, "mlp.c_proj.weight"), normal(&[4 * c, c], proj_std));
            params.insert(block_param(l, "mlp.c_proj.bias"), Tensor::zeros(&[c]));
        }
        params.insert("ln_f.weight", Tensor::ones(&[c]));
        params.insert("ln_f.bias", Tensor::zeros(&[c]));
        GptModel::from_params(config, params)
    }

    /// Wraps an existing parameter set, checking every expected tensor is
    /// present with the right shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<GptModel> {
        config.validate()?;
        let reference = expected_shapes(&config);
        if params.len() != reference.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                reference.len(),
                params.len()
            )));
        }
        for (name, shape) in &reference {
            let t = params.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::dim("from_params", t.shape(), shape));
            }
        }
        let mut sites = vec![DropoutSite {
            path: "drop_emb".into(),
            rate: 0.0,
        }];
        for l in 0..config.n_layer {
            for s in ["attn.attn_dropout", "attn.resid_dropout", "mlp.dropout"] {
                sites.push(DropoutSite {
                    path: block_param(l, s),
                    rate: 0.0,
                });
            }
        }
        let mut model = GptModel {
            current_dropout: config.dropout_p,
            config,
            params,
            sites,
            update_calls: 0,
        };
        model.set_sites(model.current_dropout);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn current_dropout(&self) -> f64 {
        self.current_dropout
    }

    /// Number of [`GptModel::update_dropout`] calls since construction.
    pub fn update_calls(&self) -> u64 {
        self.update_calls
    }

    fn set_sites(&mut self, p: f64) {
        for s in &mut self.sites {
            s.rate = p;
        }
    }

    /// Sets the rate of every dropout site to `p`. Parameters are untouched.
    pub fn update_dropout(&mut self, p: f64) -> Result<()> {
        check_rate(p)?;
        self.current_dropout = p;
        self.set_sites(p);
        self.config.dropout_p = p;
        self.update_calls += 1;
        Ok(())
    }

    pub fn site_rates(&self) -> Vec<(String, f64)> {
        self.sites.iter().map(|s| (s.path.clone(), s.rate)).collect()
    }

    /// Runs the network over `tokens` (`[batch, seq]`). In training mode each
    /// dropout site `k` draws its mask from `rng.derive(k)`; in eval mode no
    /// randomness is used.
    pub fn forward(&self, tokens: &TokenBatch, targets: Option<&TokenBatch>, training: bool, rng: &RngState) -> Result<Forward> {
        let cfg = &self.config;
        let (b, t) = (tokens.rows, tokens.cols);
        if t > cfg.block_size {
            return Err(Error::ContextOverflow {
                seq: t,
                block_size: cfg.block_size,
            });
        }
        if let Some(&id) = tokens.ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::Vocabulary {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
        if let Some(y) = targets {
            if (y.rows, y.cols) != (b, t) {
                return Err(Error::dim("forward targets", &[y.rows, y.cols], &[b, t]));
            }
        }

        let mut g = Graph::new();
        let p = &self.params;
        let mut site = 0u64;
        let mut site_rng = || {
            let r = rng.derive(site);
            site += 1;
            r
        };

        let wte = g.param(p, "wte")?;
        let wpe = g.param(p, "wpe")?;
        let tok = g.embedding(wte, tokens)?;
        let pos_ids = TokenBatch::new(1, t, (0..t).collect())?;
        let pos = g.embedding(wpe, &pos_ids)?;
        let mut x = g.add(tok, pos)?;
        x = g.dropout(x, self.sites[0].rate, training, &mut site_rng())?;

        for l in 0..cfg.n_layer {
            let rate = |k: usize| self.sites[1 + 3 * l + k].rate;
            let pv = |g: &mut Graph, name: &str| g.param(p, &block_param(l, name));

            let (w, bias) = (pv(&mut g, "ln_1.weight")?, pv(&mut g, "ln_1.bias")?);
            let h = g.layer_norm(x, w, bias)?;
            let (w, bias) = (pv(&mut g, "attn.c_attn.weight")?, pv(&mut g, "attn.c_attn.bias")?);
            let qkv = g.linear(h, w, bias)?;
            let a = g.causal_attention(qkv, cfg.n_head, rate(0), training, &mut site_rng())?;
            let (w, bias) = (pv(&mut g, "attn.c_proj.weight")?, pv(&mut g, "attn.c_proj.bias")?);
            let a = g.linear(a, w, bias)?;
            let a = g.dropout(a, rate(1), training, &mut site_rng())?;
            x = g.add(x, a)?;

            let (w, bias) = (pv(&mut g, "ln_2.weight")?, pv(&mut g, "ln_2.bias")?);
            let h = g.layer_norm(x, w, bias)?;
            let (w, bias) = (pv(&mut g, "mlp.c_fc.weight")?, pv(&mut g, "mlp.c_fc.bias")?);
            let f = g.linear(h, w, bias)?;
            let f = g.gelu(f);
            let (w, bias) = (pv(&mut g, "mlp.c_proj.weight")?, pv(&mut g, "mlp.c_proj.bias")?);
            let f = g.linear(f, w, bias)?;
            let f = g.dropout(f, rate(2), training, &mut site_rng())?;
            x = g.add(x, f)?;
        }

        let (w, bias) = (g.param(p, "ln_f.weight")?, g.param(p, "ln_f.bias")?);
        let x = g.layer_norm(x, w, bias)?;
        let logits = g.matmul(x, wte, true)?;
        let loss = match targets {
            Some(y) => Some(g.cross_entropy(logits, &y.ids)?),
            None => None,
        };
        Ok(Forward { graph: g, logits, loss })
    }

    /// Eval-mode mean cross-entropy of `tokens` against `targets`.
    pub fn eval_loss(&self, tokens: &TokenBatch, targets: &TokenBatch) -> Result<f64> {
        let fwd = self.forward(tokens, Some(targets), false, &RngState::new(0, 0))?;
        Ok(fwd.loss_value().expect("targets given"))
    }

    /// Autoregressive sampling in eval mode. Returns `prompt` followed by
    /// `max_new` sampled ids; the context is cropped to the last
    /// `block_size` tokens.
    pub fn generate(&self, prompt: &[usize], max_new: usize, temperature: f64, top_k: Option<usize>, rng: &mut RngState) -> Result<Vec<usize>> {
        if prompt.is_empty() {
            return Err(Error::InvalidInput("prompt must not be empty".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidInput(format!("temperature {temperature} must be positive")));
        }
        if top_k == Some(0) {
            return Err(Error::InvalidInput("top_k must be at least 1".into()));
        }
        let mut out = prompt.to_vec();
        let no_dropout = RngState::new(0, 0);
        for _ in 0..max_new {
            let start = out.len().saturating_sub(self.config.block_size);
            let ctx = &out[start..];
            let batch = TokenBatch::new(1, ctx.len(), ctx.to_vec())?;
            let fwd = self.forward(&batch, None, false, &no_dropout)?;
            let v = self.config.vocab_size;
            let logits = &fwd.logits().data()[(ctx.len() - 1) * v..];
            out.push(sample_logits(logits, temperature, top_k, rng));
        }
        Ok(out)
    }
}

/// Draws one id from `softmax(logits / temperature)` restricted to the
/// `top_k` largest logits. `top_k == Some(1)` is greedy and draws nothing.
pub fn sample_logits(logits: &[f32], temperature: f64, top_k: Option<usize>, rng: &mut RngState) -> usize {
    let argmax = || {
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best
    };
    if top_k == Some(1) {
        return argmax();
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    if let Some(k) = top_k {
        order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
        order.truncate(k.min(logits.len()));
    }
    let max = order.iter().map(|&i| logits[i] as f64).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = order
        .iter()
        .map(|&i| ((logits[i] as f64 - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.uniform_f64() * total;
    for (&i, &w) in order.iter().zip(&weights) {
        if u < w {
            return i;
        }
        u -= w;
    }
    *order.last().expect("non-empty vocabulary")
}

/// Parameter names and shapes in serialization order.
pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let c = config.n_embd;
    let mut v = vec![
        ("wte".to_string(), vec![config.vocab_size, c]),
        ("wpe".to_string(), vec![config.block_size, c]),
    ];
    for l in 0..config.n_layer {
        for (name, shape) in [
            ("ln_1.weight", vec![c]),
            ("ln_1.bias", vec![c]),
            ("attn.c_attn.weight", vec![c, 3 * c]),
            ("attn.c_attn.bias", vec![3 * c]),
            ("attn.c_proj.weight", vec![c, c]),
            ("attn.c_proj.bias", vec![c]),
            ("ln_2.weight", vec![c]),
            ("ln_2.bias", vec![c]),
            ("mlp.c_fc.weight", vec![c, 4 * c]),
            ("mlp.c_fc.bias", vec![4 * c]),
            ("mlp.c_proj.weight", vec![4 * c, c]),
            ("mlp.c_proj.bias", vec![c]),
        ] {
            v.push((block_param(l, name), shape));
        }
    }
    v.push(("ln_f.weight".into(), vec![c]));
    v.push(("ln_f.bias".into(), vec![c]));
    v
}
