//! Visual grounding read off the visual logits.
//!
//! The vocabulary distribution at a visual position says what that patch
//! "means" to the model. Object-directed grounding takes the probability of a
//! given word at every patch (visual semantic confidence, VSC). Object-agnostic
//! grounding scores how definite each patch's top-k distribution is (visual
//! semantic salience, VSS).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::vocab::{words_of, TokenId, Vocabulary};
use crate::numerics::{l0_fraction, row_softmax, sum_normalize, tol, Matrix, Scalar};

/// Default natural-log existence threshold on image confidence.
pub const EXIST_THRESHOLD: f64 = -2.5;

/// Default top-k for salience.
pub const DEFAULT_TOP_K: usize = 10;

/// `(m, V)` visual logits together with their row softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualLogits<T> {
    logits: Matrix<T>,
    probs: Matrix<T>,
}

impl<T: Scalar> VisualLogits<T> {
    pub fn new(logits: Matrix<T>) -> Result<Self> {
        let probs = row_softmax(&logits)?;
        Ok(Self { logits, probs })
    }

    pub fn logits(&self) -> &Matrix<T> {
        &self.logits
    }

    pub fn probs(&self) -> &Matrix<T> {
        &self.probs
    }

    /// Number of visual tokens.
    pub fn patches(&self) -> usize {
        self.logits.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.logits.cols()
    }

    fn check_word(&self, word: TokenId) -> Result<()> {
        if word >= self.vocab_size() {
            return Err(Error::Index(format!(
                "word id {word} outside vocab of {}",
                self.vocab_size()
            )));
        }
        Ok(())
    }

    /// Per-patch confidence for `word`: one column of the probability matrix.
    pub fn confidence_column(&self, word: TokenId) -> Result<Vec<T>> {
        self.check_word(word)?;
        Ok(self.probs.column(word))
    }
}

/// Normalized nonnegative weights over visual tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grounding<T> {
    pub weights: Vec<T>,
    /// Fraction of live (nonzero) entries.
    pub rho: T,
    /// Built from an all-zero input; weights are uniform.
    pub degenerate: bool,
}

impl<T: Scalar> Grounding<T> {
    /// Sum-normalizes a nonnegative vector.
    pub fn from_nonnegative(values: &[T]) -> Result<Self> {
        let n = sum_normalize(values)?;
        let rho = l0_fraction(&n.values, T::lit(tol::L0_EPS));
        Ok(Self {
            weights: n.values,
            rho,
            degenerate: n.degenerate,
        })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Self::from_nonnegative(&vec![T::one(); m])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Checks the sum and live-fraction invariants.
    pub fn check(&self) -> Result<()> {
        let total: T = self.weights.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(tol::GROUNDING_SUM) {
            return Err(Error::InvalidInput(format!("grounding sums to {total}")));
        }
        if self.weights.iter().any(|w| *w < T::zero()) {
            return Err(Error::InvalidInput("negative grounding weight".into()));
        }
        if self.rho != l0_fraction(&self.weights, T::lit(tol::L0_EPS)) {
            return Err(Error::InvalidInput("stale live-mass fraction".into()));
        }
        Ok(())
    }
}

/// Per-patch overlap of one object's mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskAnnotation {
    pub word: String,
    /// Fraction of each patch's area covered by the object, in `[0, 1]`.
    #[serde(rename = "mask_overlaps")]
    pub overlaps: Vec<f64>,
}

impl MaskAnnotation {
    pub fn new(word: impl Into<String>, overlaps: Vec<f64>) -> Result<Self> {
        if let Some(g) = overlaps.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return Err(Error::InvalidInput(format!("overlap {g} outside [0, 1]")));
        }
        Ok(Self {
            word: word.into(),
            overlaps,
        })
    }

    pub fn overlaps_as<T: Scalar>(&self) -> Vec<T> {
        self.overlaps.iter().map(|&g| T::lit(g)).collect()
    }

    /// Number of patches touched by the mask.
    pub fn patch_count(&self) -> usize {
        self.overlaps.iter().filter(|&&g| g > 0.0).count()
    }
}

/// Softmax probability of `word` at visual token `patch`.
pub fn vsc_token<T: Scalar>(vl: &VisualLogits<T>, patch: usize, word: TokenId) -> Result<T> {
    if patch >= vl.patches() {
        return Err(Error::Index(format!(
            "patch {patch} outside {} visual tokens",
            vl.patches()
        )));
    }
    vl.check_word(word)?;
    Ok(vl.probs.get(patch, word))
}

/// Max-pooled confidence of `word` over all visual tokens.
pub fn image_confidence<T: Scalar>(vl: &VisualLogits<T>, word: TokenId) -> Result<T> {
    Ok(vl
        .confidence_column(word)?
        .into_iter()
        .fold(T::neg_infinity(), T::max))
}

/// `ln(conf) > threshold`.
pub fn exists<T: Scalar>(conf: T, threshold: T) -> Result<bool> {
    if conf.is_nan() || conf <= T::zero() || conf > T::one() {
        return Err(Error::InvalidInput(format!("confidence {conf} outside (0, 1]")));
    }
    Ok(conf.ln() > threshold)
}

/// Normalized per-patch confidence of `word`.
pub fn object_grounding<T: Scalar>(vl: &VisualLogits<T>, word: TokenId) -> Result<Grounding<T>> {
    Grounding::from_nonnegative(&vl.confidence_column(word)?)
}

/// Elementwise max over groundings, renormalized to unit sum.
pub fn merge_groundings<T: Scalar>(groundings: &[Grounding<T>]) -> Result<Grounding<T>> {
    let first = groundings
        .first()
        .ok_or_else(|| Error::InvalidInput("no groundings to merge".into()))?;
    let m = first.len();
    let mut merged = first.weights.clone();
    for g in &groundings[1..] {
        if g.len() != m {
            return Err(Error::Shape(format!("merging groundings of lengths {m} and {}", g.len())));
        }
        for (a, &b) in merged.iter_mut().zip(&g.weights) {
            *a = a.max(b);
        }
    }
    Grounding::from_nonnegative(&merged)
}

/// Orientation of salience values before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VssSign {
    /// Use `-sum(ln p_k) / ln K` as is.
    #[default]
    Raw,
    /// Use `max - x`.
    Flipped,
}

/// Raw per-patch salience `-sum_k ln p_k / ln K` over each patch's top-k
/// probabilities.
pub fn vss_values<T: Scalar>(vl: &VisualLogits<T>, k: usize) -> Result<Vec<T>> {
    if k < 2 || k > vl.vocab_size() {
        return Err(Error::InvalidInput(format!(
            "top-k {k} outside [2, {}]",
            vl.vocab_size()
        )));
    }
    let ln_k = T::lit(k as f64).ln();
    let mut row = Vec::with_capacity(vl.vocab_size());
    Ok((0..vl.patches())
        .map(|i| {
            row.clear();
            row.extend_from_slice(vl.probs.row(i));
            row.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
            // underflowed probabilities would give an infinite log
            let floor = T::min_positive_value();
            -row[..k].iter().map(|&p| p.max(floor).ln()).sum::<T>() / ln_k
        })
        .collect())
}

/// Flips raw values to `max - x`.
pub(crate) fn reverse_values<T: Scalar>(values: &[T]) -> Vec<T> {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    values.iter().map(|&x| max - x).collect()
}

/// Object-agnostic grounding from salience.
pub fn vss<T: Scalar>(vl: &VisualLogits<T>, k: usize, sign: VssSign) -> Result<Grounding<T>> {
    let raw = vss_values(vl, k)?;
    match sign {
        VssSign::Raw => Grounding::from_nonnegative(&raw),
        VssSign::Flipped => Grounding::from_nonnegative(&reverse_values(&raw)),
    }
}

/// Dice overlap `2 sum(c g) / (sum c + sum g)`.
pub fn dice<T: Scalar>(c: &[T], g: &[T]) -> Result<T> {
    if c.len() != g.len() {
        return Err(Error::Shape(format!("dice of lengths {} and {}", c.len(), g.len())));
    }
    if c.iter().chain(g).any(|x| *x < T::zero() || !x.is_finite()) {
        return Err(Error::InvalidInput("dice needs finite nonnegative entries".into()));
    }
    let sc: T = c.iter().copied().sum();
    let sg: T = g.iter().copied().sum();
    if sc + sg == T::zero() {
        return Err(Error::InvalidInput("dice of two all-zero vectors".into()));
    }
    let inter: T = c.iter().zip(g).map(|(&a, &b)| a * b).sum();
    Ok(T::lit(2.0) * inter / (sc + sg))
}

/// Object words of `vocab` named in `question`, case-insensitive, whole
/// words only, in order of first appearance.
pub fn extract_objects(question: &str, vocab: &Vocabulary) -> Vec<String> {
    let objects = vocab.object_words();
    let mut found: Vec<String> = Vec::new();
    for w in words_of(question) {
        if objects.contains(&w) && !found.contains(&w) {
            found.push(w);
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vl(rows: &[Vec<f64>]) -> VisualLogits<f64> {
        VisualLogits::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn vsc_uniform_and_normalized() {
        let v = vl(&[vec![0.0; 4], vec![1.0, 2.0, 3.0, 4.0]]);
        for w in 0..4 {
            assert!((vsc_token(&v, 0, w).unwrap() - 0.25).abs() < 1e-12);
        }
        let total: f64 = (0..4).map(|w| vsc_token(&v, 1, w).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(matches!(vsc_token(&v, 2, 0), Err(Error::Index(_))));
        assert!(matches!(vsc_token(&v, 0, 4), Err(Error::Index(_))));
    }

    #[test]
    fn image_confidence_is_max() {
        // probabilities of word 0 per patch: 0.1, 0.7, 0.2 (two-word rows)
        let rows: Vec<Vec<f64>> = [0.1f64, 0.7, 0.2]
            .iter()
            .map(|p| vec![p.ln(), (1.0 - p).ln()])
            .collect();
        let v = vl(&rows);
        assert!((image_confidence(&v, 0).unwrap() - 0.7).abs() < 1e-12);
        let single = vl(&[vec![0.3, -1.0, 2.0]]);
        assert_eq!(
            image_confidence(&single, 2).unwrap(),
            vsc_token(&single, 0, 2).unwrap()
        );
    }

    #[test]
    fn existence_threshold() {
        assert!(exists(0.7f64, EXIST_THRESHOLD).unwrap());
        assert!(!exists(0.05f64, EXIST_THRESHOLD).unwrap());
        assert!(!exists((-2.5f64).exp(), EXIST_THRESHOLD).unwrap());
        assert!(exists(0.0f64, EXIST_THRESHOLD).is_err());
        assert!(exists(-0.1f64, EXIST_THRESHOLD).is_err());
    }

    #[test]
    fn object_grounding_examples() {
        let rows: Vec<Vec<f64>> = [0.2f64, 0.6, 0.2]
            .iter()
            .map(|p| vec![p.ln(), (1.0 - p).ln()])
            .collect();
        let g = object_grounding(&vl(&rows), 0).unwrap();
        // VSC column [0.2, 0.6, 0.2] normalized by its sum 1.0
        for (a, b) in g.weights.iter().zip([0.2, 0.6, 0.2]) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = object_grounding(&vl(&[vec![5.0, -5.0], vec![5.0, -5.0]]), 0).unwrap();
        assert!((g.weights[0] - 0.5).abs() < 1e-12 && (g.weights[1] - 0.5).abs() < 1e-12);
        assert_eq!(g.rho, 1.0);
    }

    #[test]
    fn merge_examples() {
        let a = Grounding::from_nonnegative(&[1.0f64, 0.0]).unwrap();
        let b = Grounding::from_nonnegative(&[0.0f64, 1.0]).unwrap();
        let m = merge_groundings(&[a.clone(), b]).unwrap();
        assert_eq!(m.weights, vec![0.5, 0.5]);
        assert_eq!(merge_groundings(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(merge_groundings(&[a.clone(), a.clone()]).unwrap(), a);
        let c = Grounding::from_nonnegative(&[1.0f64, 1.0, 1.0]).unwrap();
        assert!(matches!(merge_groundings(&[a, c]), Err(Error::Shape(_))));
        assert!(merge_groundings::<f64>(&[]).is_err());
    }

    #[test]
    fn vss_uniform_row() {
        // V = 4, k = 2, every top probability 0.25: -2 ln(0.25) / ln 2 = 4
        let v = vl(&[vec![0.0; 4], vec![0.0; 4]]);
        let raw = vss_values(&v, 2).unwrap();
        assert!((raw[0] - 4.0).abs() < 1e-12);
        let g = vss(&v, 2, VssSign::Raw).unwrap();
        assert_eq!(g.weights, vec![0.5, 0.5]);
        assert!(vss_values(&v, 1).is_err());
        assert!(vss_values(&v, 5).is_err());
    }

    #[test]
    fn vss_flip_reverses_order() {
        let v = vl(&[vec![0.0; 4], vec![6.0, 0.0, 0.0, 0.0]]);
        let raw = vss(&v, 3, VssSign::Raw).unwrap();
        let flip = vss(&v, 3, VssSign::Flipped).unwrap();
        assert!(raw.weights[1] > raw.weights[0]);
        assert!(flip.weights[0] > flip.weights[1]);
    }

    #[test]
    fn dice_examples() {
        assert_eq!(dice(&[1.0f64, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(dice(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(dice(&[0.5f64, 0.5, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(dice(&[0.25f64; 4], &[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.25);
        assert!(dice(&[0.0f64, 0.0], &[0.0, 0.0]).is_err());
        assert!(dice(&[1.0f64], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn extraction() {
        let vocab = Vocabulary::new(&["dog", "cat"], 1).unwrap();
        assert_eq!(extract_objects("Is there a dog in the image?", &vocab), vec!["dog"]);
        assert_eq!(extract_objects("a cat and a dog", &vocab), vec!["cat", "dog"]);
        assert_eq!(extract_objects("a Cat, a CAT", &vocab), vec!["cat"]);
        assert!(extract_objects("Is there a zebra?", &vocab).is_empty());
        assert!(extract_objects("hotdogs", &vocab).is_empty());
    }

    proptest! {
        #[test]
        fn dice_symmetric_and_bounded(
            pair in (1usize..16).prop_flat_map(|n| (
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(0.0f64..1.0, n),
            ))
        ) {
            prop_assume!(pair.0.iter().chain(&pair.1).sum::<f64>() > 0.0);
            let a = dice(&pair.0, &pair.1).unwrap();
            let b = dice(&pair.1, &pair.0).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn merge_idempotent_and_commutative(
            pair in (1usize..12).prop_flat_map(|n| (
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(0.0f64..1.0, n),
            ))
        ) {
            let a = Grounding::from_nonnegative(&pair.0).unwrap();
            let b = Grounding::from_nonnegative(&pair.1).unwrap();
            let ab = merge_groundings(&[a.clone(), b.clone()]).unwrap();
            let ba = merge_groundings(&[b, a.clone()]).unwrap();
            prop_assert_eq!(&ab, &ba);
            let aa = merge_groundings(&[a.clone(), a.clone()]).unwrap();
            for (x, y) in aa.weights.iter().zip(&a.weights) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let total: f64 = ab.weights.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn image_confidence_matches_scan(
            rows in prop::collection::vec(prop::collection::vec(-8.0f64..8.0, 5), 1..10),
            w in 0usize..5,
        ) {
            let v = vl(&rows);
            let best = (0..rows.len())
                .map(|i| vsc_token(&v, i, w).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(image_confidence(&v, w).unwrap(), best);
        }
    }
}
