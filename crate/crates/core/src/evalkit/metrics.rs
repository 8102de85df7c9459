//! Hallucination and discrimination metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Yes/no answer tallies for existence questions. Answers that are neither
/// yes nor no are kept apart and count as wrong.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub unmapped_present: usize,
    pub unmapped_absent: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl BinaryCounts {
    /// Records one answer: `said_yes` is `None` when the answer was neither.
    pub fn record(&mut self, present: bool, said_yes: Option<bool>) {
        match (present, said_yes) {
            (true, Some(true)) => self.tp += 1,
            (true, Some(false)) => self.fn_ += 1,
            (false, Some(true)) => self.fp += 1,
            (false, Some(false)) => self.tn += 1,
            (true, None) => self.unmapped_present += 1,
            (false, None) => self.unmapped_absent += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_ + self.unmapped_present + self.unmapped_absent
    }

    /// Unmapped answers lower accuracy, and on present objects also recall.
    pub fn metrics(&self) -> BinaryMetrics {
        let accuracy = ratio(self.tp + self.tn, self.total());
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_ + self.unmapped_present);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        BinaryMetrics {
            accuracy,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Caption-level object hallucination rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chair {
    /// Fraction of captions with at least one hallucinated object.
    pub chair_s: f64,
    /// Fraction of mentioned objects that are hallucinated.
    pub chair_i: f64,
}

pub type ObjectSet = BTreeSet<String>;

/// Standard CHAIR: `chair_i` over object mentions, `chair_s` over captions.
pub fn chair_metrics(generated: &[ObjectSet], annotated: &[ObjectSet]) -> Result<Chair> {
    if generated.is_empty() {
        return Err(Error::InvalidInput("no captions".into()));
    }
    if generated.len() != annotated.len() {
        return Err(Error::Shape(format!(
            "{} captions against {} annotations",
            generated.len(),
            annotated.len()
        )));
    }
    let mut mentions = 0;
    let mut hallucinated = 0;
    let mut bad_captions = 0;
    for (g, a) in generated.iter().zip(annotated) {
        let h = g.difference(a).count();
        mentions += g.len();
        hallucinated += h;
        bad_captions += usize::from(h > 0);
    }
    Ok(Chair {
        chair_s: ratio(bad_captions, generated.len()),
        chair_i: ratio(hallucinated, mentions),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Amber {
    pub chair: f64,
    pub cover: f64,
    pub hal: f64,
    pub cog: f64,
    /// `(1 - chair + f1) / 2` with the discriminative F1.
    pub amber: f64,
}

/// Per-caption AMBER rates averaged over captions.
///
/// A caption that mentions no object has CHAIR and Cog 0 (logged). A caption
/// with no annotated objects is left out of the Cover average.
pub fn amber_metrics(
    generated: &[ObjectSet],
    annotated: &[ObjectSet],
    hallu_targets: &[ObjectSet],
    f1: f64,
) -> Result<Amber> {
    if generated.is_empty() {
        return Err(Error::InvalidInput("no captions".into()));
    }
    if generated.len() != annotated.len() || generated.len() != hallu_targets.len() {
        return Err(Error::Shape(format!(
            "{} captions, {} annotations, {} hallucination target sets",
            generated.len(),
            annotated.len(),
            hallu_targets.len()
        )));
    }
    let n = generated.len() as f64;
    let (mut chair, mut cog, mut hal) = (0.0, 0.0, 0.0);
    let (mut cover, mut covered_captions) = (0.0, 0usize);
    for (i, ((r, a), h)) in generated.iter().zip(annotated).zip(hallu_targets).enumerate() {
        if r.is_empty() {
            log::info!("caption {i} mentions no object; CHAIR and Cog scored 0");
        } else {
            let c = 1.0 - r.intersection(a).count() as f64 / r.len() as f64;
            chair += c;
            hal += if c > 0.0 { 1.0 } else { 0.0 };
            cog += r.intersection(h).count() as f64 / r.len() as f64;
        }
        if !a.is_empty() {
            cover += r.intersection(a).count() as f64 / a.len() as f64;
            covered_captions += 1;
        }
    }
    let chair = chair / n;
    Ok(Amber {
        chair,
        cover: if covered_captions == 0 {
            0.0
        } else {
            cover / covered_captions as f64
        },
        hal: hal / n,
        cog: cog / n,
        amber: (1.0 - chair + f1) / 2.0,
    })
}

/// Point-biserial correlation of `values` with binary `labels` (population
/// standard deviation).
pub fn point_biserial(values: &[f64], labels: &[bool]) -> Result<f64> {
    if values.len() != labels.len() {
        return Err(Error::Shape(format!("{} values, {} labels", values.len(), labels.len())));
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::InvalidInput("point-biserial needs both classes".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::InvalidInput("point-biserial of constant values".into()));
    }
    let m1 = values.iter().zip(labels).filter(|(_, &l)| l).map(|(v, _)| v).sum::<f64>() / n1 as f64;
    let m0 = values.iter().zip(labels).filter(|(_, &l)| !l).map(|(v, _)| v).sum::<f64>() / n0 as f64;
    let (p, q) = (n1 as f64 / n, n0 as f64 / n);
    Ok((m1 - m0) / var.sqrt() * (p * q).sqrt())
}

/// Area under the ROC curve: the chance that a random positive scores above
/// a random negative, ties counting half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidInput("AUC needs both classes".into()));
    }
    let mut wins = 0.0;
    for p in &pos {
        for q in &neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}
