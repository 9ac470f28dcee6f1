//! Slice-level numeric kernels shared by the eager tensor functions and the
//! autodiff graph. Everything here works on contiguous row-major `f32`
//! buffers; reductions accumulate in `f64`.

use crate::rng::RngState;

pub(crate) const LN_EPS: f64 = 1e-5;

/// A strided view into a flat buffer, used to describe gemm operands
/// (including per-head slices of a fused qkv buffer) without copying.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl View {
    pub fn dense(rows: usize, cols: usize) -> View {
        View {
            offset: 0,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn at(mut self, offset: usize) -> View {
        self.offset = offset;
        self
    }

    pub fn with_row_stride(mut self, stride: usize) -> View {
        self.row_stride = stride;
        self
    }

    /// The same storage read as its transpose.
    pub fn t(self) -> View {
        View {
            offset: self.offset,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn last_index(&self) -> usize {
        self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
    }
}

/// `c ← alpha·a·b + beta·c` over strided views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(alpha: f32, a: &[f32], av: View, b: &[f32], bv: View, beta: f32, c: &mut [f32], cv: View) {
    assert_eq!(av.cols, bv.rows, "gemm inner extent");
    assert_eq!(av.rows, cv.rows, "gemm row extent");
    assert_eq!(bv.cols, cv.cols, "gemm column extent");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    if av.cols == 0 {
        for i in 0..cv.rows {
            for j in 0..cv.cols {
                c[cv.offset + i * cv.row_stride + j * cv.col_stride] *= beta;
            }
        }
        return;
    }
    assert!(av.last_index() < a.len(), "gemm lhs out of bounds");
    assert!(bv.last_index() < b.len(), "gemm rhs out of bounds");
    assert!(cv.last_index() < c.len(), "gemm output out of bounds");
    // SAFETY: every index the kernel touches lies inside the three slices, as
    // checked above, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::sgemm(
            av.rows,
            av.cols,
            bv.cols,
            alpha,
            a.as_ptr().add(av.offset),
            av.row_stride as isize,
            av.col_stride as isize,
            b.as_ptr().add(bv.offset),
            bv.row_stride as isize,
            bv.col_stride as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.row_stride as isize,
            cv.col_stride as isize,
        );
    }
}

/// Dense `[m,k]·[k,n]`, with either operand optionally stored transposed.
pub(crate) fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, a_t: bool, b_t: bool) -> Vec<f32> {
    let mut c = vec![0.0; m * n];
    matmul_acc(a, b, m, k, n, a_t, b_t, 0.0, &mut c);
    c
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, a_t: bool, b_t: bool, beta: f32, c: &mut [f32]) {
    let av = if a_t { View::dense(k, m).t() } else { View::dense(m, k) };
    let bv = if b_t { View::dense(n, k).t() } else { View::dense(k, n) };
    gemm(1.0, a, av, b, bv, beta, c, View::dense(m, n));
}

const GELU_SCALE: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_CUBE: f32 = 0.044_715;

// 0.5·(1 + tanh u) = σ(2u), which needs a single exp.
fn gelu_gate(v: f32) -> f32 {
    let u = GELU_SCALE * (v + GELU_CUBE * v * v * v);
    1.0 / (1.0 + (-2.0 * u).exp())
}

pub(crate) fn gelu(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| v * gelu_gate(v)).collect()
}

pub(crate) fn gelu_backward(x: &[f32], dout: &[f32], dx: &mut [f32]) {
    for ((d, &v), &g) in dx.iter_mut().zip(x).zip(dout) {
        let s = gelu_gate(v);
        let local = s + 2.0 * v * s * (1.0 - s) * GELU_SCALE * (1.0 + 3.0 * GELU_CUBE * v * v);
        *d += local * g;
    }
}

pub(crate) struct LayerNormOut {
    pub out: Vec<f32>,
    pub mean: Vec<f32>,
    pub rstd: Vec<f32>,
}

pub(crate) fn layer_norm(x: &[f32], gain: &[f32], bias: &[f32], width: usize) -> LayerNormOut {
    let rows = x.len() / width;
    let mut out = vec![0.0; x.len()];
    let mut mean = vec![0.0; rows];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mu = row.iter().map(|&v| v as f64).sum::<f64>() / width as f64;
        let var = row.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / width as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        let o = &mut out[r * width..(r + 1) * width];
        for i in 0..width {
            let norm = ((row[i] as f64 - mu) * rs) as f32;
            o[i] = norm * gain[i] + bias[i];
        }
        mean[r] = mu as f32;
        rstd[r] = rs as f32;
    }
    LayerNormOut { out, mean, rstd }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward(
    x: &[f32],
    gain: &[f32],
    mean: &[f32],
    rstd: &[f32],
    dout: &[f32],
    width: usize,
    dx: &mut [f32],
    dgain: &mut [f32],
    dbias: &mut [f32],
) {
    let rows = x.len() / width;
    for r in 0..rows {
        let xr = &x[r * width..(r + 1) * width];
        let dr = &dout[r * width..(r + 1) * width];
        let (mu, rs) = (mean[r], rstd[r]);
        let mut dnorm_mean = 0.0f64;
        let mut dnorm_norm_mean = 0.0f64;
        for i in 0..width {
            let norm = (xr[i] - mu) * rs;
            let dnorm = (gain[i] * dr[i]) as f64;
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm as f64;
        }
        dnorm_mean /= width as f64;
        dnorm_norm_mean /= width as f64;
        let dxr = &mut dx[r * width..(r + 1) * width];
        for i in 0..width {
            let norm = (xr[i] - mu) * rs;
            dbias[i] += dr[i];
            dgain[i] += norm * dr[i];
            let dnorm = (gain[i] * dr[i]) as f64;
            dxr[i] += ((dnorm - dnorm_mean - norm as f64 * dnorm_norm_mean) * rs as f64) as f32;
        }
    }
}

/// Softmax over contiguous rows of `width`, only the first `valid(row)`
/// entries of each row participate; the rest are set to zero.
pub(crate) fn softmax_rows_prefix(x: &mut [f32], width: usize, valid: impl Fn(usize) -> usize) {
    for (r, row) in x.chunks_mut(width).enumerate() {
        let n = valid(r);
        let (live, dead) = row.split_at_mut(n);
        let max = live.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for v in live.iter_mut() {
            let e = (*v - max).exp();
            *v = e;
            sum += e as f64;
        }
        let inv = (1.0 / sum) as f32;
        for v in live.iter_mut() {
            *v *= inv;
        }
        dead.fill(0.0);
    }
}

/// Mean negative log-likelihood over rows of `logits`, plus the row softmax
/// (kept for the backward pass).
pub(crate) fn cross_entropy(logits: &[f32], targets: &[usize], vocab: usize) -> (f64, Vec<f32>) {
    let mut probs = logits.to_vec();
    let mut total = 0.0f64;
    for (row, &t) in probs.chunks_mut(vocab).zip(targets) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum = 0.0f64;
        for &v in row.iter() {
            sum += (v as f64 - max).exp();
        }
        let lse = max + sum.ln();
        total += lse - row[t] as f64;
        for v in row.iter_mut() {
            *v = ((*v as f64 - lse).exp()) as f32;
        }
    }
    (total / targets.len() as f64, probs)
}

/// Inverted-dropout multipliers: 0 with probability `p`, `1/(1-p)` otherwise.
pub(crate) fn dropout_mask(n: usize, p: f64, rng: &mut RngState) -> Vec<f32> {
    let keep_scale = (1.0 / (1.0 - p)) as f32;
    let threshold = p as f32;
    (0..n)
        .map(|_| if rng.uniform_f32() < threshold { 0.0 } else { keep_scale })
        .collect()
}

/// Shapes for fused causal self-attention over a `[batch, seq, 3·embd]`
/// projection laid out as `[q | k | v]`, each split into `n_head` heads.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnDims {
    pub batch: usize,
    pub seq: usize,
    pub embd: usize,
    pub n_head: usize,
}

impl AttnDims {
    fn head_size(&self) -> usize {
        self.embd / self.n_head
    }

    fn q_view(&self, b: usize, h: usize, which: usize) -> View {
        let hs = self.head_size();
        View::dense(self.seq, hs)
            .with_row_stride(3 * self.embd)
            .at(b * self.seq * 3 * self.embd + which * self.embd + h * hs)
    }

    fn out_view(&self, b: usize, h: usize) -> View {
        let hs = self.head_size();
        View::dense(self.seq, hs)
            .with_row_stride(self.embd)
            .at(b * self.seq * self.embd + h * hs)
    }

    fn square(&self, b: usize, h: usize) -> View {
        View::dense(self.seq, self.seq).at((b * self.n_head + h) * self.seq * self.seq)
    }

    pub fn prob_len(&self) -> usize {
        self.batch * self.n_head * self.seq * self.seq
    }
}

/// Returns `(out, probs)`; `probs` are the post-softmax attention weights
/// before dropout, `mask` (if any) holds the dropout multipliers.
pub(crate) fn attention_forward(qkv: &[f32], d: AttnDims, mask: Option<&[f32]>) -> (Vec<f32>, Vec<f32>) {
    let scale = 1.0 / (d.head_size() as f32).sqrt();
    let mut probs = vec![0.0; d.prob_len()];
    let mut out = vec![0.0; d.batch * d.seq * d.embd];
    let mut dropped = vec![0.0; d.seq * d.seq];
    for b in 0..d.batch {
        for h in 0..d.n_head {
            let sq = d.square(b, h);
            gemm(scale, qkv, d.q_view(b, h, 0), qkv, d.q_view(b, h, 1).t(), 0.0, &mut probs, sq);
            let p = &mut probs[sq.offset..sq.offset + d.seq * d.seq];
            softmax_rows_prefix(p, d.seq, |r| r + 1);
            let weights: &[f32] = match mask {
                Some(m) => {
                    let m = &m[sq.offset..sq.offset + d.seq * d.seq];
                    for ((o, &pv), &mv) in dropped.iter_mut().zip(p.iter()).zip(m) {
                        *o = pv * mv;
                    }
                    &dropped
                }
                None => p,
            };
            gemm(1.0, weights, View::dense(d.seq, d.seq), qkv, d.q_view(b, h, 2), 0.0, &mut out, d.out_view(b, h));
        }
    }
    (out, probs)
}

pub(crate) fn attention_backward(
    qkv: &[f32],
    probs: &[f32],
    mask: Option<&[f32]>,
    dout: &[f32],
    d: AttnDims,
    dqkv: &mut [f32],
) {
    let scale = 1.0 / (d.head_size() as f32).sqrt();
    let t = d.seq;
    let mut weights = vec![0.0; t * t];
    let mut dp = vec![0.0; t * t];
    let sq_local = View::dense(t, t);
    for b in 0..d.batch {
        for h in 0..d.n_head {
            let sq = d.square(b, h);
            let p = &probs[sq.offset..sq.offset + t * t];
            let m = mask.map(|m| &m[sq.offset..sq.offset + t * t]);
            match m {
                Some(m) => {
                    for ((w, &pv), &mv) in weights.iter_mut().zip(p).zip(m) {
                        *w = pv * mv;
                    }
                }
                None => weights.copy_from_slice(p),
            }
            // dv += weightsᵀ · dout
            gemm(1.0, &weights, sq_local.t(), dout, d.out_view(b, h), 1.0, dqkv, d.q_view(b, h, 2));
            // d(weights) = dout · vᵀ
            gemm(1.0, dout, d.out_view(b, h), qkv, d.q_view(b, h, 2).t(), 0.0, &mut dp, sq_local);
            if let Some(m) = m {
                for (g, &mv) in dp.iter_mut().zip(m) {
                    *g *= mv;
                }
            }
            // softmax backward, row-wise; entries above the diagonal have p = 0
            for r in 0..t {
                let pr = &p[r * t..(r + 1) * t];
                let gr = &mut dp[r * t..(r + 1) * t];
                let dot: f64 = pr[..=r].iter().zip(&gr[..=r]).map(|(&a, &g)| a as f64 * g as f64).sum();
                let dot = dot as f32;
                for c in 0..t {
                    gr[c] = if c <= r { pr[c] * (gr[c] - dot) } else { 0.0 };
                }
            }
            // dq += scale · dS · k ; dk += scale · dSᵀ · q
            gemm(scale, &dp, sq_local, qkv, d.q_view(b, h, 1), 1.0, dqkv, d.q_view(b, h, 0));
            gemm(scale, &dp, sq_local.t(), qkv, d.q_view(b, h, 0), 1.0, dqkv, d.q_view(b, h, 1));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    fn transpose(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
        let mut t = vec![0.0; a.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn matmul_matches_naive_in_all_layouts() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        let at = transpose(&a, m, k);
        let bt = transpose(&b, k, n);
        for (lhs, a_t) in [(&a, false), (&at, true)] {
            for (rhs, b_t) in [(&b, false), (&bt, true)] {
                let got = matmul(lhs, rhs, m, k, n, a_t, b_t);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-5, "{a_t} {b_t}");
                }
            }
        }
    }

    #[test]
    fn causal_softmax_zeroes_future() {
        let mut x = vec![1.0; 9];
        softmax_rows_prefix(&mut x, 3, |r| r + 1);
        assert_eq!(&x[0..3], &[1.0, 0.0, 0.0]);
        assert!((x[3] - 0.5).abs() < 1e-7 && x[5] == 0.0);
        assert!((x[6..9].iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dropout_mask_values() {
        let mut rng = RngState::new(3, 0);
        let m = dropout_mask(1000, 0.5, &mut rng);
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        let zeros = m.iter().filter(|&&v| v == 0.0).count();
        assert!((400..600).contains(&zeros));
    }
}
