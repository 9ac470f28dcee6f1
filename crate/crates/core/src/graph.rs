//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Each op evaluates
//! eagerly, stores its output plus whatever the backward rule needs (layer
//! norm statistics, attention probabilities, dropout masks), and appends a
//! node. [`Graph::backward`] walks the tape in reverse and deposits
//! parameter gradients into a [`ParamStore`].

use indexmap::IndexMap;

use crate::error::{check_rate, Error, Result};
use crate::kernels::{self, AttnDims};
use crate::params::ParamStore;
use crate::rng::RngState;
use crate::tensor::{broadcasts_over, Tensor, TokenBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(String),
    MatMul { a: Var, b: Var, b_t: bool },
    Linear { x: Var, w: Var, bias: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, c: f32 },
    Gelu { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, mean: Vec<f32>, rstd: Vec<f32> },
    Embedding { table: Var, ids: Vec<usize> },
    Attention { qkv: Var, dims: AttnDims, probs: Vec<f32>, mask: Option<Vec<f32>> },
    Dropout { x: Var, mask: Vec<f32> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f32>, loss: f64 },
    Sum { x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Grads {
    grads: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: IndexMap<String, Var>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; no gradient flows to any parameter through it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a named parameter. Repeated calls with the same name return the
    /// same node, so tied weights accumulate a single gradient.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.get(name)?.clone();
        let v = self.push(value, Op::Param(name.to_string()));
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// `a·b` with `b` a `[k,n]` matrix, or `a·bᵀ` with `b` stored `[n,k]`
    /// when `b_t` is set. Leading axes of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var, b_t: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let k = av.last_dim();
        let ok = av.rank() >= 2 && bv.rank() == 2 && bv.shape()[if b_t { 1 } else { 0 }] == k;
        if !ok {
            return Err(Error::dim("matmul", av.shape(), bv.shape()));
        }
        let n = bv.shape()[if b_t { 0 } else { 1 }];
        let m = av.rows();
        let data = kernels::matmul(av.data(), bv.data(), m, k, n, false, b_t);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::from_parts(shape, data), Op::MatMul { a, b, b_t }))
    }

    /// `x·w + bias` with `w: [in, out]`, `bias: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(bias));
        let k = xv.last_dim();
        if wv.rank() != 2 || wv.shape()[0] != k || xv.rank() < 2 {
            return Err(Error::dim("linear", xv.shape(), wv.shape()));
        }
        let n = wv.shape()[1];
        if bv.shape() != [n] {
            return Err(Error::dim("linear bias", wv.shape(), bv.shape()));
        }
        let m = xv.rows();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bv.data());
        }
        kernels::matmul_acc(xv.data(), wv.data(), m, k, n, false, false, 1.0, &mut out);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::from_parts(shape, out), Op::Linear { x, w, bias }))
    }

    /// Elementwise `a + b`, broadcasting `b` over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = crate::tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let out = crate::tensor::scale(self.value(x), c);
        self.push(out, Op::Scale { x, c })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = crate::tensor::gelu(self.value(x));
        self.push(out, Op::Gelu { x })
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let c = xv.last_dim();
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
        }
        let r = kernels::layer_norm(xv.data(), gv.data(), bv.data(), c);
        let out = Tensor::from_parts(xv.shape().to_vec(), r.out);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean: r.mean,
                rstd: r.rstd,
            },
        ))
    }

    pub fn embedding(&mut self, table: Var, ids: &TokenBatch) -> Result<Var> {
        let out = crate::tensor::embedding_lookup(self.value(table), ids)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.ids.clone(),
            },
        ))
    }

    /// Causal multi-head self-attention over a fused `[batch, seq, 3·embd]`
    /// q/k/v projection. Dropout with rate `p` is applied to the attention
    /// probabilities after the softmax when `training` is set.
    pub fn causal_attention(&mut self, qkv: Var, n_head: usize, p: f64, training: bool, rng: &mut RngState) -> Result<Var> {
        check_rate(p)?;
        let qv = self.value(qkv);
        let s = qv.shape();
        if s.len() != 3 || !s[2].is_multiple_of(3) || !(s[2] / 3).is_multiple_of(n_head) {
            return Err(Error::dim("causal_attention", s, &[n_head]));
        }
        let dims = AttnDims {
            batch: s[0],
            seq: s[1],
            embd: s[2] / 3,
            n_head,
        };
        let mask = (training && p > 0.0).then(|| kernels::dropout_mask(dims.prob_len(), p, rng));
        let (out, probs) = kernels::attention_forward(qv.data(), dims, mask.as_deref());
        let out = Tensor::from_parts(vec![dims.batch, dims.seq, dims.embd], out);
        Ok(self.push(out, Op::Attention { qkv, dims, probs, mask }))
    }

    /// Inverted dropout. When inactive (`p == 0` or eval mode) this records
    /// nothing and returns `x` itself.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut RngState) -> Result<Var> {
        check_rate(p)?;
        if !training || p == 0.0 {
            return Ok(x);
        }
        let xv = self.value(x);
        let mask = kernels::dropout_mask(xv.len(), p, rng);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// Mean cross-entropy of last-axis logits against `targets`; a scalar node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let vocab = lv.last_dim();
        if lv.rows() != targets.len() {
            return Err(Error::dim("cross_entropy", lv.shape(), &[targets.len()]));
        }
        if let Some(&id) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::Vocabulary { id, vocab_size: vocab });
        }
        let (loss, probs) = kernels::cross_entropy(lv.data(), targets, vocab);
        Ok(self.push(
            Tensor::scalar(loss as f32),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                loss,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s as f32), Op::Sum { x })
    }

    /// The scalar value of `v` at the precision it was reduced in (`f64` for
    /// cross-entropy nodes).
    pub fn scalar(&self, v: Var) -> f64 {
        match &self.nodes[v.0].op {
            Op::CrossEntropy { loss, .. } => *loss,
            _ => self.nodes[v.0].value.item() as f64,
        }
    }

    /// Back-propagates from the scalar `loss`, accumulating into the
    /// gradients of `store` for every parameter bound via [`Graph::param`].
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Grads> {
        let Some(root) = self.nodes.get(loss.0) else {
            return Err(Error::State("backward called on a node that was never recorded".into()));
        };
        if root.value.len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f32>>], v: Var, len: usize) -> &mut Vec<f32> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => store.accumulate_grad(name, &g)?,
                Op::MatMul { a, b, b_t } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let k = av.last_dim();
                    let m = av.rows();
                    let n = node.value.last_dim();
                    // da = g · bᵀ (or g · b when b is stored transposed)
                    let da = acc(&mut grads, *a, av.len());
                    kernels::matmul_acc(&g, bv.data(), m, n, k, false, !*b_t, 1.0, da);
                    let db = acc(&mut grads, *b, bv.len());
                    if *b_t {
                        // d(bᵀ) = aᵀ·g, stored as gᵀ·a
                        kernels::matmul_acc(&g, av.data(), n, m, k, true, false, 1.0, db);
                    } else {
                        kernels::matmul_acc(av.data(), &g, k, m, n, true, false, 1.0, db);
                    }
                }
                Op::Linear { x, w, bias } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let k = xv.last_dim();
                    let m = xv.rows();
                    let n = wv.shape()[1];
                    let dx = acc(&mut grads, *x, xv.len());
                    kernels::matmul_acc(&g, wv.data(), m, n, k, false, true, 1.0, dx);
                    let dw = acc(&mut grads, *w, wv.len());
                    kernels::matmul_acc(xv.data(), &g, k, m, n, true, false, 1.0, dw);
                    let db = acc(&mut grads, *bias, n);
                    for row in g.chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
                Op::Add { a, b } => {
                    let blen = self.value(*b).len();
                    let da = acc(&mut grads, *a, g.len());
                    for (d, &v) in da.iter_mut().zip(&g) {
                        *d += v;
                    }
                    debug_assert!(broadcasts_over(self.value(*a).shape(), self.value(*b).shape()));
                    let db = acc(&mut grads, *b, blen);
                    for chunk in g.chunks(blen) {
                        for (d, &v) in db.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let dx = acc(&mut grads, *x, g.len());
                    for (d, &v) in dx.iter_mut().zip(&g) {
                        *d += c * v;
                    }
                }
                Op::Gelu { x } => {
                    let xv = self.value(*x);
                    let dx = acc(&mut grads, *x, xv.len());
                    kernels::gelu_backward(xv.data(), &g, dx);
                }
                Op::LayerNorm { x, gain, bias, mean, rstd } => {
                    let (xv, gv) = (self.value(*x), self.value(*gain));
                    let c = xv.last_dim();
                    let mut dgain = vec![0.0; c];
                    let mut dbias = vec![0.0; c];
                    let dx = acc(&mut grads, *x, xv.len());
                    kernels::layer_norm_backward(xv.data(), gv.data(), mean, rstd, &g, c, dx, &mut dgain, &mut dbias);
                    add_into(acc(&mut grads, *gain, c), &dgain);
                    add_into(acc(&mut grads, *bias, c), &dbias);
                }
                Op::Embedding { table, ids } => {
                    let tv = self.value(*table);
                    let width = tv.last_dim();
                    let dt = acc(&mut grads, *table, tv.len());
                    for (row, &id) in g.chunks(width).zip(ids) {
                        add_into(&mut dt[id * width..(id + 1) * width], row);
                    }
                }
                Op::Attention { qkv, dims, probs, mask } => {
                    let qv = self.value(*qkv);
                    let dq = acc(&mut grads, *qkv, qv.len());
                    kernels::attention_backward(qv.data(), probs, mask.as_deref(), &g, *dims, dq);
                }
                Op::Dropout { x, mask } => {
                    let dx = acc(&mut grads, *x, g.len());
                    for ((d, &v), &m) in dx.iter_mut().zip(&g).zip(mask) {
                        *d += v * m;
                    }
                }
                Op::CrossEntropy { logits, targets, probs, .. } => {
                    let vocab = self.value(*logits).last_dim();
                    let scale = g[0] / targets.len() as f32;
                    let dl = acc(&mut grads, *logits, probs.len());
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &probs[r * vocab..(r + 1) * vocab];
                        let drow = &mut dl[r * vocab..(r + 1) * vocab];
                        for (j, (d, &p)) in drow.iter_mut().zip(row).enumerate() {
                            let y = if j == t { 1.0 } else { 0.0 };
                            *d += (p - y) * scale;
                        }
                    }
                }
                Op::Sum { x } => {
                    let len = self.value(*x).len();
                    let dx = acc(&mut grads, *x, len);
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            grads[i] = Some(g);
        }
        let shapes = self.nodes[..n].iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Grads { grads, shapes })
    }
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
