//! Existence-question, captioning and grounding-quality evaluation loops.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{dice, vss_values, VisualLogits};
use crate::model::{
    greedy_generate, prefill_visual, ForwardOptions, Model, SequenceLayout, TokenId, VgaRequest,
};
use crate::numerics::Scalar;
use crate::vga::{GuidanceSource, Mode, VgaConfig};

use super::metrics::{amber_metrics, chair_metrics, Amber, BinaryCounts, BinaryMetrics, Chair, ObjectSet};
use super::scenes::{Label, Question, Scene, SceneSet};

/// Anything that can answer an existence question with a word.
pub trait ExistenceAnswerer: Sync {
    fn answer(&self, scene: &Scene, question: &Question) -> Result<String>;
}

/// Answers with the first greedy token of a model, guided per `config`.
pub struct ModelAnswerer<'a, T> {
    pub model: &'a Model<T>,
    pub config: &'a VgaConfig,
}

fn request<'a>(config: &'a VgaConfig, question: &'a str, scene: &'a Scene) -> Option<VgaRequest<'a>> {
    (config.guidance_source != GuidanceSource::None).then_some(VgaRequest {
        config,
        question,
        annotation: Some(&scene.objects),
    })
}

impl<T: Scalar> ExistenceAnswerer for ModelAnswerer<'_, T> {
    fn answer(&self, scene: &Scene, question: &Question) -> Result<String> {
        let vocab = self.model.vocab();
        let word = vocab
            .id(&question.word)
            .filter(|&id| vocab.is_object_word(id))
            .ok_or_else(|| Error::InvalidInput(format!("`{}` is not an object word", question.word)))?;
        let layout = SequenceLayout::existence(vocab, &scene.patches, word)?;
        let text = question.text();
        let out = greedy_generate(self.model, &layout, request(self.config, &text, scene), 1)?;
        Ok(vocab.word(out.tokens[0]).unwrap_or("").to_string())
    }
}

/// Maps an answer word to yes/no, case-insensitively.
pub fn parse_yes_no(answer: &str) -> Option<bool> {
    match answer.trim().to_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistenceReport {
    pub n_questions: usize,
    pub counts: BinaryCounts,
    #[serde(flatten)]
    pub metrics: BinaryMetrics,
    /// Whether each question was answered correctly, in scene order.
    #[serde(skip)]
    pub correct: Vec<bool>,
}

/// Runs every question of every scene through `answerer`. Scenes are
/// processed in parallel on the current rayon pool; results keep scene order.
pub fn run_existence_eval_with(answerer: &dyn ExistenceAnswerer, scenes: &SceneSet) -> Result<ExistenceReport> {
    let per_scene: Vec<Vec<(bool, Option<bool>)>> = scenes
        .scenes
        .par_iter()
        .map(|scene| {
            scene
                .questions
                .iter()
                .map(|q| {
                    let said = answerer.answer(scene, q)?;
                    let parsed = parse_yes_no(&said);
                    if parsed.is_none() {
                        log::warn!("answer `{said}` to `{}` is neither yes nor no", q.text());
                    }
                    Ok((q.label == Label::Present, parsed))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut counts = BinaryCounts::default();
    let mut correct = Vec::new();
    for (present, said) in per_scene.into_iter().flatten() {
        counts.record(present, said);
        correct.push(said == Some(present));
    }
    Ok(ExistenceReport {
        n_questions: correct.len(),
        counts,
        metrics: counts.metrics(),
        correct,
    })
}

pub fn run_existence_eval<T: Scalar>(model: &Model<T>, scenes: &SceneSet, config: &VgaConfig) -> Result<ExistenceReport> {
    run_existence_eval_with(&ModelAnswerer { model, config }, scenes)
}

/// Object words in a token stream.
pub fn mentioned_objects<T: Scalar>(model: &Model<T>, tokens: &[TokenId]) -> ObjectSet {
    let vocab = model.vocab();
    tokens
        .iter()
        .filter(|&&t| vocab.is_object_word(t))
        .filter_map(|&t| vocab.word(t).map(str::to_string))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionReport {
    pub n_captions: usize,
    #[serde(flatten)]
    pub chair: Chair,
    pub amber: Amber,
    /// Mean fraction of annotated objects mentioned.
    pub recall: f64,
    pub mean_objects: f64,
    pub mean_tokens: f64,
    #[serde(skip)]
    pub generated: Vec<ObjectSet>,
}

/// Captions every scene and scores the mentioned objects. `f1` is the
/// discriminative F1 folded into the AMBER score.
pub fn run_caption_eval<T: Scalar>(
    model: &Model<T>,
    scenes: &SceneSet,
    config: &VgaConfig,
    max_len: usize,
    f1: f64,
) -> Result<CaptionReport> {
    let outputs: Vec<Vec<TokenId>> = scenes
        .scenes
        .par_iter()
        .map(|scene| {
            let layout = SequenceLayout::caption(&scene.patches)?;
            let out = greedy_generate(model, &layout, request(config, "describe", scene), max_len)?;
            Ok(out.tokens)
        })
        .collect::<Result<_>>()?;
    let generated: Vec<ObjectSet> = outputs.iter().map(|t| mentioned_objects(model, t)).collect();
    let annotated: Vec<ObjectSet> = scenes.scenes.iter().map(|s| s.annotated.iter().cloned().collect()).collect();
    let targets: Vec<ObjectSet> = scenes
        .scenes
        .iter()
        .map(|s| s.hallu_targets.iter().cloned().collect())
        .collect();
    let chair = chair_metrics(&generated, &annotated)?;
    let amber = amber_metrics(&generated, &annotated, &targets, f1)?;
    let n = generated.len() as f64;
    let recall = generated
        .iter()
        .zip(&annotated)
        .map(|(g, a)| if a.is_empty() { 0.0 } else { g.intersection(a).count() as f64 / a.len() as f64 })
        .sum::<f64>()
        / n;
    Ok(CaptionReport {
        n_captions: generated.len(),
        chair,
        amber,
        recall,
        mean_objects: generated.iter().map(|g| g.len() as f64).sum::<f64>() / n,
        mean_tokens: outputs.iter().map(|t| t.len() as f64).sum::<f64>() / n,
        generated,
    })
}

/// Existence-question counterpart of a captioning configuration, used for
/// the F1 that AMBER needs: same strengths and layers, question mode, and
/// object-directed grounding in place of salience.
pub fn discriminative_config(config: &VgaConfig) -> VgaConfig {
    let guidance_source = match config.guidance_source {
        GuidanceSource::Vss | GuidanceSource::ReversedVss => GuidanceSource::Vsc,
        other => other,
    };
    VgaConfig {
        mode: Mode::Vqa,
        guidance_source,
        ..config.clone()
    }
}

/// Which grounding is scored against the masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingKind {
    Vsc,
    Vss,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiceBucket {
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub source: GroundingKind,
    pub mean: f64,
    pub count: usize,
    /// Masks covering at most 5% of the patches.
    pub small: DiceBucket,
    pub medium: DiceBucket,
    /// Masks covering at least 25% of the patches.
    pub large: DiceBucket,
    #[serde(skip)]
    pub scores: Vec<f64>,
}

/// Visual logits of a scene, from a forward pass over BOS and the patches.
pub fn scene_visual_logits<T: Scalar>(model: &Model<T>, scene: &Scene) -> Result<VisualLogits<T>> {
    let layout = SequenceLayout::caption(&scene.patches)?;
    let pre = prefill_visual(model, &layout, ForwardOptions::default())?;
    VisualLogits::new(pre.visual_logits)
}

/// Per-patch confidence (VSC) or max-scaled salience (VSS) of a scene
/// against its masks. VSC is scored per object against that object's mask;
/// VSS, being object-agnostic, per scene against the union of masks.
pub fn grounding_quality_eval<T: Scalar>(model: &Model<T>, scenes: &SceneSet, kind: GroundingKind, top_k: usize) -> Result<DiceReport> {
    let m = scenes.grid.len() as f64;
    let pairs: Vec<Vec<(f64, f64)>> = scenes
        .scenes
        .par_iter()
        .map(|scene| {
            let vl = scene_visual_logits(model, scene)?;
            match kind {
                GroundingKind::Vsc => scene
                    .objects
                    .iter()
                    .map(|obj| {
                        let id = model
                            .vocab()
                            .id(&obj.word)
                            .ok_or_else(|| Error::InvalidInput(format!("`{}` not in vocab", obj.word)))?;
                        let c: Vec<f64> = vl.confidence_column(id)?.iter().map(|x| x.to_f64_lossy()).collect();
                        Ok((dice(&c, &obj.overlaps)?, obj.overlaps.iter().sum::<f64>() / m))
                    })
                    .collect(),
                GroundingKind::Vss => {
                    let raw: Vec<f64> = vss_values(&vl, top_k)?.iter().map(|x| x.to_f64_lossy()).collect();
                    let peak = raw.iter().copied().fold(0.0, f64::max);
                    let c: Vec<f64> = raw.iter().map(|x| if peak > 0.0 { x / peak } else { 0.0 }).collect();
                    let union = scene.union_mask();
                    Ok(vec![(dice(&c, &union)?, union.iter().sum::<f64>() / m)])
                }
            }
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(f64, f64)> = pairs.into_iter().flatten().collect();
    let bucket = |pred: &dyn Fn(f64) -> bool| {
        let xs: Vec<f64> = pairs.iter().filter(|(_, a)| pred(*a)).map(|(d, _)| *d).collect();
        DiceBucket {
            mean: if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 },
            count: xs.len(),
        }
    };
    let scores: Vec<f64> = pairs.iter().map(|(d, _)| *d).collect();
    Ok(DiceReport {
        source: kind,
        mean: if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 },
        count: scores.len(),
        small: bucket(&|a| a <= 0.05),
        medium: bucket(&|a| a > 0.05 && a < 0.25),
        large: bucket(&|a| a >= 0.25),
        scores,
    })
}
