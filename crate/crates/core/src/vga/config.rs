use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{VssSign, DEFAULT_TOP_K, EXIST_THRESHOLD};

/// Task the guidance is tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Static object-directed guidance.
    #[default]
    Vqa,
    /// Object-agnostic guidance updated after every generated token.
    Caption,
}

/// Where the grounding vector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceSource {
    /// No guidance; generation is vanilla.
    None,
    /// Uniform over visual tokens.
    Even,
    /// Confidence of the objects named in the question.
    Vsc,
    /// Salience of every visual token.
    Vss,
    /// Salience turned upside down (`max - x`, renormalized).
    ReversedVss,
    /// Annotated object masks.
    GroundTruth,
}

impl GuidanceSource {
    pub const ALL: [GuidanceSource; 6] = [
        GuidanceSource::None,
        GuidanceSource::Even,
        GuidanceSource::Vsc,
        GuidanceSource::Vss,
        GuidanceSource::ReversedVss,
        GuidanceSource::GroundTruth,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VgaConfig {
    /// Guidance strength.
    pub beta: f64,
    /// Suppression rate of the per-token grounding update.
    pub lambda: f64,
    /// First guided layer.
    pub start_layer: usize,
    /// One past the last guided layer; half the depth when unset.
    pub end_layer: Option<usize>,
    pub top_k: usize,
    pub exist_threshold: f64,
    pub mode: Mode,
    pub guidance_source: GuidanceSource,
    pub head_balancing: bool,
    /// Stop guiding at `end_layer`; when off, guidance runs to the last layer.
    pub early_termination: bool,
    /// Per-token grounding update in caption mode.
    pub pvg_enabled: bool,
    pub vss_sign: VssSign,
    /// Only update the grounding for tokens some patch is confident about.
    pub pvg_content_only: bool,
    /// Guide every query row after the visual span during prefill, not just
    /// the final one.
    pub guide_all_post_visual_rows: bool,
}

impl Default for VgaConfig {
    fn default() -> Self {
        Self {
            beta: 0.2,
            lambda: 0.02,
            start_layer: 0,
            end_layer: None,
            top_k: DEFAULT_TOP_K,
            exist_threshold: EXIST_THRESHOLD,
            mode: Mode::Vqa,
            guidance_source: GuidanceSource::Vsc,
            head_balancing: true,
            early_termination: true,
            pvg_enabled: true,
            vss_sign: VssSign::Raw,
            pvg_content_only: false,
            guide_all_post_visual_rows: false,
        }
    }
}

impl VgaConfig {
    /// Existence-question defaults: object-directed guidance at strength 0.25.
    pub fn vqa() -> Self {
        Self {
            beta: 0.25,
            ..Self::default()
        }
    }

    /// Captioning defaults: salience guidance with per-token updates.
    pub fn caption() -> Self {
        Self {
            mode: Mode::Caption,
            guidance_source: GuidanceSource::Vss,
            ..Self::default()
        }
    }

    /// No-guidance configuration.
    pub fn vanilla() -> Self {
        Self {
            guidance_source: GuidanceSource::None,
            ..Self::default()
        }
    }

    /// Guided layer range for a model with `n_layers` layers.
    pub fn layer_range(&self, n_layers: usize) -> Range<usize> {
        let end = if self.early_termination {
            self.end_layer.unwrap_or(n_layers / 2)
        } else {
            n_layers
        };
        self.start_layer..end.min(n_layers)
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if let Some(end) = self.end_layer {
            if end > n_layers {
                return Err(Error::Config(format!("end_layer {end} beyond {n_layers} layers")));
            }
        }
        let end = if self.early_termination {
            self.end_layer.unwrap_or(n_layers / 2)
        } else {
            n_layers
        };
        if self.start_layer > end {
            return Err(Error::Config(format!(
                "start_layer {} after end_layer {end}",
                self.start_layer
            )));
        }
        if self.top_k < 2 {
            return Err(Error::Config(format!("top_k must be at least 2, got {}", self.top_k)));
        }
        Ok(())
    }
}
