//! Output-space guidance: the attention correction computed from values
//! alone, and the per-head balancing coefficients.

use crate::error::{Error, Result};
use crate::numerics::{cosine_sim_clamped, sum_normalize, Matrix, Scalar};

/// Grounding-weighted sum of the visual value rows, per head.
///
/// Adding `beta * G` to the attention weights over the visual span changes
/// the output by exactly `beta * delta_z`, so the correction can be formed
/// without ever seeing the weights. Returned heads are laid side by side like
/// the rows of `visual_values`.
pub fn delta_z<T: Scalar>(grounding: &[T], visual_values: &Matrix<T>) -> Result<Vec<T>> {
    if grounding.len() != visual_values.rows() {
        return Err(Error::Shape(format!(
            "grounding of length {} against {} visual value rows",
            grounding.len(),
            visual_values.rows()
        )));
    }
    let mut out = vec![T::zero(); visual_values.cols()];
    for (i, &g) in grounding.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(visual_values.row(i)) {
            *o += g * v;
        }
    }
    Ok(out)
}

/// Per-head balancing coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadBalance<T> {
    /// Clamped cosine between each head's output and its correction.
    pub similarity: Vec<T>,
    /// Similarities normalized to unit sum.
    pub gamma_prime: Vec<T>,
    /// `ReLU(2 - H * gamma')`.
    pub gamma: Vec<T>,
}

/// Heads whose output already points along the correction get less of it.
pub fn head_balance<T: Scalar>(z_row: &[T], dz_row: &[T], n_heads: usize) -> Result<HeadBalance<T>> {
    if n_heads == 0 || z_row.len() != dz_row.len() || !z_row.len().is_multiple_of(n_heads) {
        return Err(Error::Shape(format!(
            "head balance over {} / {} values and {n_heads} heads",
            z_row.len(),
            dz_row.len()
        )));
    }
    let dh = z_row.len() / n_heads;
    let similarity = (0..n_heads)
        .map(|h| cosine_sim_clamped(&z_row[h * dh..(h + 1) * dh], &dz_row[h * dh..(h + 1) * dh]))
        .collect::<Result<Vec<T>>>()?;
    balance_from_similarity(&similarity)
}

/// Same as [`head_balance`] starting from precomputed similarities.
pub fn balance_from_similarity<T: Scalar>(similarity: &[T]) -> Result<HeadBalance<T>> {
    let gamma_prime = sum_normalize(similarity)?.values;
    let h = T::lit(similarity.len() as f64);
    let gamma = gamma_prime
        .iter()
        .map(|&g| (T::lit(2.0) - h * g).max(T::zero()))
        .collect();
    Ok(HeadBalance {
        similarity: similarity.to_vec(),
        gamma_prime,
        gamma,
    })
}
