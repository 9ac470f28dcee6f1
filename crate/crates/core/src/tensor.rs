//! Dense row-major `f32` tensors of rank ≤ 3 and their eager (non-recorded)
//! operations. The autodiff graph in [`crate::graph`] uses the same kernels.

use crate::error::{check_rate, Error, Result};
use crate::kernels;
use crate::rng::RngState;

pub const MAX_RANK: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.len() > MAX_RANK {
        return Err(Error::InvalidInput(format!("rank {} exceeds {MAX_RANK}", shape.len())));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidInput(format!("zero extent in shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::InvalidInput(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Internal constructor for shapes already known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = check_shape(shape).expect("valid shape");
        Tensor::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        let n = check_shape(shape).expect("valid shape");
        Tensor::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::from_parts(Vec::new(), vec![v])
    }

    pub fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Extent of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of last-axis rows.
    pub fn rows(&self) -> usize {
        self.len() / self.last_dim()
    }

    pub fn item(&self) -> f32 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != self.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }
}

/// A `[rows, cols]` matrix of token ids (batch × sequence).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub rows: usize,
    pub cols: usize,
    pub ids: Vec<usize>,
}

impl TokenBatch {
    pub fn new(rows: usize, cols: usize, ids: Vec<usize>) -> Result<TokenBatch> {
        if rows == 0 || cols == 0 || ids.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "token batch {rows}x{cols} with {} ids",
                ids.len()
            )));
        }
        Ok(TokenBatch { rows, cols, ids })
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.ids[r * self.cols..(r + 1) * self.cols]
    }
}

/// `a · b`. `a` may be `[m,k]` or `[b,m,k]` (leading axes flattened) against
/// a `[k,n]` matrix, or `[b,m,k]·[b,k,n]` batched.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let err = || Error::dim("matmul", a.shape(), b.shape());
    if a.rank() < 2 || b.rank() < 2 {
        return Err(err());
    }
    let k = a.last_dim();
    match b.rank() {
        2 => {
            if b.shape[0] != k {
                return Err(err());
            }
            let n = b.shape[1];
            let m = a.rows();
            let mut shape = a.shape.clone();
            *shape.last_mut().unwrap() = n;
            Ok(Tensor::from_parts(shape, kernels::matmul(&a.data, &b.data, m, k, n, false, false)))
        }
        3 => {
            if a.rank() != 3 || a.shape[0] != b.shape[0] || b.shape[1] != k {
                return Err(err());
            }
            let (batch, m, n) = (a.shape[0], a.shape[1], b.shape[2]);
            let mut out = Vec::with_capacity(batch * m * n);
            for i in 0..batch {
                let ai = &a.data[i * m * k..(i + 1) * m * k];
                let bi = &b.data[i * k * n..(i + 1) * k * n];
                out.extend(kernels::matmul(ai, bi, m, k, n, false, false));
            }
            Ok(Tensor::from_parts(vec![batch, m, n], out))
        }
        _ => Err(err()),
    }
}

/// Elementwise sum. `b` may also match only the trailing axes of `a`, in
/// which case it is broadcast over the leading ones.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if !broadcasts_over(a.shape(), b.shape()) {
        return Err(Error::dim("add", a.shape(), b.shape()));
    }
    let n = b.len();
    let data = a
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| v + b.data[i % n])
        .collect();
    Ok(Tensor::from_parts(a.shape.clone(), data))
}

/// `b` (ignoring leading unit axes) matches the trailing axes of `a`.
pub(crate) fn broadcasts_over(a: &[usize], b: &[usize]) -> bool {
    let lead = b.iter().take_while(|&&d| d == 1).count();
    let b = &b[lead..];
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

pub fn scale(x: &Tensor, c: f32) -> Tensor {
    Tensor::from_parts(x.shape.clone(), x.data.iter().map(|&v| v * c).collect())
}

/// Tanh-approximated GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    Tensor::from_parts(x.shape.clone(), kernels::gelu(&x.data))
}

/// Normalizes each last-axis row to zero mean and unit variance, then
/// applies `gain` and `bias` (both shaped like the last axis).
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let c = x.last_dim();
    if gain.shape() != [c] || bias.shape() != [c] {
        return Err(Error::dim("layer_norm", x.shape(), gain.shape()));
    }
    let out = kernels::layer_norm(&x.data, &gain.data, &bias.data, c);
    Ok(Tensor::from_parts(x.shape.clone(), out.out))
}

pub fn softmax_lastdim(x: &Tensor) -> Tensor {
    let mut data = x.data.clone();
    let width = x.last_dim();
    kernels::softmax_rows_prefix(&mut data, width, |_| width);
    Tensor::from_parts(x.shape.clone(), data)
}

/// Gathers rows of a `[vocab, width]` table; the result is `[rows, cols, width]`.
pub fn embedding_lookup(table: &Tensor, ids: &TokenBatch) -> Result<Tensor> {
    if table.rank() != 2 {
        return Err(Error::dim("embedding_lookup", table.shape(), &[ids.rows, ids.cols]));
    }
    let (vocab, width) = (table.shape[0], table.shape[1]);
    let mut out = Vec::with_capacity(ids.ids.len() * width);
    for &id in &ids.ids {
        if id >= vocab {
            return Err(Error::Vocabulary { id, vocab_size: vocab });
        }
        out.extend_from_slice(&table.data[id * width..(id + 1) * width]);
    }
    Ok(Tensor::from_parts(vec![ids.rows, ids.cols, width], out))
}

/// Mean cross-entropy (nats) of last-axis logits against class indices.
pub fn cross_entropy_mean(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let vocab = logits.last_dim();
    if logits.rows() != targets.len() {
        return Err(Error::dim("cross_entropy_mean", logits.shape(), &[targets.len()]));
    }
    if let Some(&id) = targets.iter().find(|&&t| t >= vocab) {
        return Err(Error::Vocabulary { id, vocab_size: vocab });
    }
    Ok(kernels::cross_entropy(&logits.data, targets, vocab).0)
}

/// Inverted dropout. In eval mode, or with `p == 0`, returns `x` unchanged
/// and draws nothing from `rng`.
pub fn dropout(x: &Tensor, p: f64, training: bool, rng: &mut RngState) -> Result<Tensor> {
    check_rate(p)?;
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = kernels::dropout_mask(x.len(), p, rng);
    let data = x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok(Tensor::from_parts(x.shape.clone(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let s = softmax_lastdim(&Tensor::zeros(&[3]));
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let logits = Tensor::zeros(&[4, 16]);
        let loss = cross_entropy_mean(&logits, &[0, 3, 15, 7]).unwrap();
        assert!((loss - (16f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn identity_matmul() {
        let x = Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(matmul(&Tensor::eye(3), &x).unwrap(), x);
    }

    #[test]
    fn batched_matmul() {
        let a = Tensor::new(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 2, 1], vec![1.0, 1.0, 2.0, 0.5]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 1]);
        assert_eq!(c.data(), &[3.0, 8.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(add(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let x = Tensor::new(&[2, 4], vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]).unwrap();
        let y = layer_norm(&x, &Tensor::ones(&[4]), &Tensor::zeros(&[4])).unwrap();
        for row in y.data().chunks(4) {
            let mean: f64 = row.iter().map(|&v| v as f64).sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() <= 1e-5);
            assert!((var - 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn broadcast_add_over_leading_axes() {
        let x = Tensor::zeros(&[2, 3]);
        let b = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(add(&x, &b).unwrap().data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn embedding_rejects_unknown_id() {
        let table = Tensor::zeros(&[4, 2]);
        let ids = TokenBatch::new(1, 2, vec![1, 4]).unwrap();
        assert!(matches!(
            embedding_lookup(&table, &ids),
            Err(Error::Vocabulary { id: 4, vocab_size: 4 })
        ));
    }

    #[test]
    fn dropout_identity_paths_consume_nothing() {
        let x = Tensor::new(&[5], vec![0.1, -2.0, 3.5, 7.0, 1e-3]).unwrap();
        let mut rng = RngState::new(9, 0);
        let before = rng.snapshot();
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, false, &mut rng).unwrap(), x);
        assert_eq!(rng.snapshot(), before);
    }

    #[test]
    fn dropout_rejects_bad_rates() {
        let x = Tensor::ones(&[2]);
        let mut rng = RngState::new(0, 0);
        assert!(matches!(dropout(&x, 1.0, true, &mut rng), Err(Error::InvalidRate(_))));
        assert!(matches!(dropout(&x, -0.1, true, &mut rng), Err(Error::InvalidRate(_))));
    }

    #[test]
    fn rank_above_three_rejected() {
        assert!(Tensor::new(&[1, 1, 1, 1], vec![0.0]).is_err());
    }
}
