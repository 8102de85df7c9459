use std::ops::Range;

use crate::error::{Error, Result};
use crate::grounding::{
    extract_objects, merge_groundings, object_grounding, reverse_values, vss, Grounding,
    MaskAnnotation, VisualLogits,
};
use crate::model::attention::{GuidanceRow, GuidedRows};
use crate::model::forward::{AttentionHook, SequenceLayout};
use crate::model::weights::Model;
use crate::numerics::{sum_normalize, Matrix, Scalar};

use super::balance::{delta_z, head_balance};
use super::config::{GuidanceSource, Mode, VgaConfig};

/// Guidance state carried across the decode steps of one generation.
#[derive(Debug, Clone)]
pub struct VgaSession<T> {
    config: VgaConfig,
    grounding: Grounding<T>,
    visual: VisualLogits<T>,
    visual_range: Range<usize>,
    layers: Range<usize>,
    n_heads: usize,
    beta: T,
    lambda: T,
    fallback: bool,
    updates: usize,
}

/// One grounding update: `Norm(ReLU((1 + lambda) G - lambda G_w))`.
pub fn pvg_step<T: Scalar>(g: &Grounding<T>, g_w: &[T], lambda: T) -> Result<Grounding<T>> {
    if g_w.len() != g.len() {
        return Err(Error::Shape(format!(
            "update of a {}-token grounding by a {}-token one",
            g.len(),
            g_w.len()
        )));
    }
    if lambda == T::zero() {
        return Ok(g.clone());
    }
    let next: Vec<T> = g
        .weights
        .iter()
        .zip(g_w)
        .map(|(&a, &b)| ((T::one() + lambda) * a - lambda * b).max(T::zero()))
        .collect();
    Grounding::from_nonnegative(&next)
}

/// Builds the session for one prompt from its visual logits.
///
/// VQA-style sources ground the objects named in `question`; if none are
/// found the grounding falls back to uniform and the session records it.
pub fn init_session<T: Scalar>(
    model: &Model<T>,
    layout: &SequenceLayout,
    visual_logits: &Matrix<T>,
    question: &str,
    config: &VgaConfig,
    annotation: Option<&[MaskAnnotation]>,
) -> Result<VgaSession<T>> {
    let cfg = model.config();
    config.validate(cfg.n_layers)?;
    let m = layout.visual_len();
    if visual_logits.rows() != m {
        return Err(Error::Shape(format!(
            "{} visual logit rows for {m} visual tokens",
            visual_logits.rows()
        )));
    }
    let visual = VisualLogits::new(visual_logits.clone())?;
    let mut fallback = false;
    let grounding = match config.guidance_source {
        GuidanceSource::None | GuidanceSource::Even => Grounding::uniform(m)?,
        GuidanceSource::Vsc => {
            let words = extract_objects(question, model.vocab());
            if words.is_empty() {
                log::warn!("no object words in {question:?}; falling back to uniform grounding");
                fallback = true;
                Grounding::uniform(m)?
            } else {
                let per_object = words
                    .iter()
                    .map(|w| {
                        let id = model.vocab().id(w).expect("extracted words are in the vocab");
                        object_grounding(&visual, id)
                    })
                    .collect::<Result<Vec<_>>>()?;
                merge_groundings(&per_object)?
            }
        }
        GuidanceSource::Vss => vss(&visual, config.top_k, config.vss_sign)?,
        GuidanceSource::ReversedVss => {
            let g = vss(&visual, config.top_k, config.vss_sign)?;
            Grounding::from_nonnegative(&reverse_values(&g.weights))?
        }
        GuidanceSource::GroundTruth => {
            let masks = annotation.ok_or_else(|| {
                Error::Config("ground-truth guidance needs mask annotations".into())
            })?;
            ground_truth_grounding(masks, m, question, model, config.mode)?
        }
    };
    Ok(VgaSession {
        config: config.clone(),
        grounding,
        visual,
        visual_range: layout.visual_range(),
        layers: config.layer_range(cfg.n_layers),
        n_heads: cfg.n_heads,
        beta: T::lit(config.beta),
        lambda: T::lit(config.lambda),
        fallback,
        updates: 0,
    })
}

/// Masks of the objects the question names (VQA) or of every annotated
/// object (captioning), max-pooled. A question about an unannotated object
/// has an empty mask and therefore a uniform grounding.
fn ground_truth_grounding<T: Scalar>(
    masks: &[MaskAnnotation],
    m: usize,
    question: &str,
    model: &Model<T>,
    mode: Mode,
) -> Result<Grounding<T>> {
    let wanted: Vec<String> = match mode {
        Mode::Vqa => extract_objects(question, model.vocab()),
        Mode::Caption => masks.iter().map(|a| a.word.clone()).collect(),
    };
    let mut pooled = vec![T::zero(); m];
    for mask in masks.iter().filter(|a| wanted.contains(&a.word)) {
        if mask.overlaps.len() != m {
            return Err(Error::Shape(format!(
                "mask for `{}` has {} entries, expected {m}",
                mask.word,
                mask.overlaps.len()
            )));
        }
        for (p, g) in pooled.iter_mut().zip(mask.overlaps_as::<T>()) {
            *p = p.max(g);
        }
    }
    Grounding::from_nonnegative(&pooled)
}

impl<T: Scalar> VgaSession<T> {
    pub fn config(&self) -> &VgaConfig {
        &self.config
    }

    pub fn grounding(&self) -> &Grounding<T> {
        &self.grounding
    }

    pub fn visual_logits(&self) -> &VisualLogits<T> {
        &self.visual
    }

    /// The question named no known object and grounding fell back to uniform.
    pub fn used_fallback(&self) -> bool {
        self.fallback
    }

    /// Number of grounding updates applied so far.
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Replaces the grounding (used by tests and custom sources).
    pub fn set_grounding(&mut self, grounding: Grounding<T>) -> Result<()> {
        if grounding.len() != self.grounding.len() {
            return Err(Error::Shape(format!(
                "grounding of length {} for {} visual tokens",
                grounding.len(),
                self.grounding.len()
            )));
        }
        self.grounding = grounding;
        Ok(())
    }

    pub fn layer_range(&self) -> Range<usize> {
        self.layers.clone()
    }

    fn guides(&self, layer: usize) -> bool {
        self.config.guidance_source != GuidanceSource::None
            && self.beta > T::zero()
            && self.layers.contains(&layer)
    }

    /// Live-mass factor: 1 for static guidance, the grounding's live
    /// fraction in captioning.
    pub fn rho(&self) -> T {
        match self.config.mode {
            Mode::Vqa => T::one(),
            Mode::Caption => self.grounding.rho,
        }
    }

    /// Per-head multiplier `beta * gamma_h * rho` for one output row.
    fn head_scales(&self, z_row: &[T], dz: &[T]) -> Result<Vec<T>> {
        let base = self.beta * self.rho();
        if self.config.head_balancing {
            let b = head_balance(z_row, dz, self.n_heads)?;
            Ok(b.gamma.into_iter().map(|g| base * g).collect())
        } else {
            Ok(vec![base; self.n_heads])
        }
    }

    /// Grounding update after `token` was generated. No-op outside
    /// captioning or with updates disabled.
    pub fn pvg_update(&mut self, token: usize) -> Result<()> {
        if self.config.mode != Mode::Caption || !self.config.pvg_enabled {
            return Ok(());
        }
        let column = self.visual.confidence_column(token)?;
        if self.config.pvg_content_only {
            let peak = column.iter().copied().fold(T::zero(), T::max);
            if peak <= T::lit(2.0 / self.visual.vocab_size() as f64) {
                return Ok(());
            }
        }
        let g_w = sum_normalize(&column)?.values;
        self.grounding = pvg_step(&self.grounding, &g_w, self.lambda)?;
        self.updates += 1;
        Ok(())
    }
}

/// Guided attention output for one query row.
///
/// Outside the guided layers (or with zero strength) the row is returned
/// unchanged. Otherwise each head gets `z_h + beta * gamma_h * rho * dz_h`.
pub fn guided_output<T: Scalar>(
    z_row: &[T],
    visual_values: &Matrix<T>,
    session: &VgaSession<T>,
    layer: usize,
) -> Result<Vec<T>> {
    if !session.guides(layer) {
        return Ok(z_row.to_vec());
    }
    let dz = delta_z(&session.grounding.weights, visual_values)?;
    if dz.len() != z_row.len() {
        return Err(Error::Shape(format!(
            "output row of width {} against values of width {}",
            z_row.len(),
            dz.len()
        )));
    }
    let scales = session.head_scales(z_row, &dz)?;
    let dh = z_row.len() / session.n_heads;
    Ok(z_row
        .iter()
        .zip(&dz)
        .enumerate()
        .map(|(c, (&z, &d))| z + scales[c / dh] * d)
        .collect())
}

impl<T: Scalar> AttentionHook<T> for VgaSession<T> {
    fn is_active(&self, layer: usize) -> bool {
        self.guides(layer)
    }

    fn guided_rows(&self) -> GuidedRows {
        if self.config.guide_all_post_visual_rows {
            GuidedRows::FromPosition(self.visual_range.end)
        } else {
            GuidedRows::Last
        }
    }

    fn guide_output(&mut self, layer: usize, z_row: &mut [T], visual_values: &Matrix<T>) -> Result<()> {
        let out = guided_output(z_row, visual_values, self, layer)?;
        z_row.copy_from_slice(&out);
        Ok(())
    }

    fn guidance_row(&mut self, _layer: usize, z_row: &[T], visual_values: &Matrix<T>) -> Result<GuidanceRow<T>> {
        let dz = delta_z(&self.grounding.weights, visual_values)?;
        Ok(GuidanceRow {
            weights: self.grounding.weights.clone(),
            head_scale: self.head_scales(z_row, &dz)?,
            visual_start: self.visual_range.start,
            rows: GuidedRows::Last,
        })
    }
}
