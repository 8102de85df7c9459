//! Causal multi-head attention in two forms.
//!
//! [`attention_explicit`] materializes the weight matrix and can add grounding
//! mass to it directly. [`attention_fused`] streams over key blocks with an
//! online softmax and only ever returns the output, the way fused kernels do.
//! Query row `i` sits at absolute position `n_keys - n_queries + i`.

use crate::error::{Error, Result};
use crate::numerics::{softmax_into, Matrix, Scalar};

/// Key block width of the streaming kernel.
const FUSED_BLOCK: usize = 16;

/// Query rows that receive guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidedRows {
    /// Only the final query row.
    Last,
    /// Every query row at absolute position `>= p`.
    FromPosition(usize),
}

/// Additive grounding applied to attention weights over the visual span.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRow<T> {
    /// Grounding over the visual tokens.
    pub weights: Vec<T>,
    /// Per-head multiplier of the grounding (guidance strength times head
    /// balance times live-mass fraction).
    pub head_scale: Vec<T>,
    /// Absolute key index of the first visual token.
    pub visual_start: usize,
    pub rows: GuidedRows,
}

impl<T: Scalar> GuidanceRow<T> {
    pub(crate) fn applies_to(&self, position: usize, last_position: usize) -> bool {
        match self.rows {
            GuidedRows::Last => position == last_position,
            GuidedRows::FromPosition(p) => position >= p,
        }
    }
}

fn check_shapes<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>, n_heads: usize) -> Result<()> {
    if n_heads == 0 || !q.cols().is_multiple_of(n_heads) {
        return Err(Error::Shape(format!("{} columns do not split into {n_heads} heads", q.cols())));
    }
    if k.cols() != q.cols() || v.cols() != q.cols() {
        return Err(Error::Shape(format!(
            "q/k/v widths differ: {} / {} / {}",
            q.cols(),
            k.cols(),
            v.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::Shape(format!("{} keys but {} values", k.rows(), v.rows())));
    }
    if q.rows() > k.rows() {
        return Err(Error::Shape(format!("{} queries attend over only {} keys", q.rows(), k.rows())));
    }
    Ok(())
}

/// Reference attention. Returns the output `(n_q, H * d_head)` and one
/// `(n_q, n_k)` weight matrix per head, with any guidance already added.
pub fn attention_explicit<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    n_heads: usize,
    guidance: Option<&GuidanceRow<T>>,
) -> Result<(Matrix<T>, Vec<Matrix<T>>)> {
    check_shapes(q, k, v, n_heads)?;
    let (n_q, n_k) = (q.rows(), k.rows());
    let dh = q.cols() / n_heads;
    let offset = n_k - n_q;
    if let Some(g) = guidance {
        if g.visual_start + g.weights.len() > n_k {
            return Err(Error::Shape(format!(
                "visual slice {}..{} outside {n_k} keys",
                g.visual_start,
                g.visual_start + g.weights.len()
            )));
        }
        if g.head_scale.len() != n_heads {
            return Err(Error::Shape(format!(
                "{} head scales for {n_heads} heads",
                g.head_scale.len()
            )));
        }
    }
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut z = Matrix::zeros(n_q, q.cols());
    let mut alphas = Vec::with_capacity(n_heads);
    let mut scores = vec![T::zero(); n_k];
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        let mut alpha = Matrix::zeros(n_q, n_k);
        for i in 0..n_q {
            let pos = offset + i;
            let qi = &q.row(i)[cols.clone()];
            for (j, s) in scores[..=pos].iter_mut().enumerate() {
                let kj = &k.row(j)[cols.clone()];
                *s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
            }
            let row = alpha.row_mut(i);
            softmax_into(&scores[..=pos], &mut row[..=pos]);
            if let Some(g) = guidance {
                if g.applies_to(pos, n_k - 1) {
                    for (t, &w) in g.weights.iter().enumerate() {
                        let j = g.visual_start + t;
                        if j <= pos {
                            row[j] += g.head_scale[h] * w;
                        }
                    }
                }
            }
            let out = &mut z.row_mut(i)[cols.clone()];
            for (j, &a) in row[..=pos].iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &x) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += a * x;
                }
            }
        }
        alphas.push(alpha);
    }
    Ok((z, alphas))
}

/// Streaming attention that never forms the weight matrix.
pub fn attention_fused<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    n_heads: usize,
) -> Result<Matrix<T>> {
    check_shapes(q, k, v, n_heads)?;
    let (n_q, n_k) = (q.rows(), k.rows());
    let dh = q.cols() / n_heads;
    let offset = n_k - n_q;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut z = Matrix::zeros(n_q, q.cols());
    let mut acc = vec![T::zero(); dh];
    let mut block = [T::zero(); FUSED_BLOCK];
    for i in 0..n_q {
        let end = offset + i + 1;
        for h in 0..n_heads {
            let cols = h * dh..(h + 1) * dh;
            let qi = &q.row(i)[cols.clone()];
            let mut running_max = T::neg_infinity();
            let mut denom = T::zero();
            acc.iter_mut().for_each(|a| *a = T::zero());
            for start in (0..end).step_by(FUSED_BLOCK) {
                let stop = (start + FUSED_BLOCK).min(end);
                let mut block_max = T::neg_infinity();
                for (b, j) in (start..stop).enumerate() {
                    let kj = &k.row(j)[cols.clone()];
                    let s = qi.iter().zip(kj).map(|(&a, &c)| a * c).sum::<T>() * scale;
                    block[b] = s;
                    block_max = block_max.max(s);
                }
                let new_max = running_max.max(block_max);
                let rescale = (running_max - new_max).exp();
                denom *= rescale;
                acc.iter_mut().for_each(|a| *a *= rescale);
                for (b, j) in (start..stop).enumerate() {
                    let p = (block[b] - new_max).exp();
                    denom += p;
                    for (a, &x) in acc.iter_mut().zip(&v.row(j)[cols.clone()]) {
                        *a += p * x;
                    }
                }
                running_max = new_max;
            }
            for (o, &a) in z.row_mut(i)[cols].iter_mut().zip(&acc) {
                *o = a / denom;
            }
        }
    }
    Ok(z)
}
