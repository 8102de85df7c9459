use crate::error::{Error, Result};
use crate::model::forward::{prefill_with, ForwardOptions, SequenceLayout};
use crate::model::vocab::BOS;
use crate::model::weights::Model;
use crate::numerics::Scalar;

/// Default BOS-attention level that marks a layer as ready for guidance.
pub const DEFAULT_BOS_THETA: f64 = 0.2;

/// Per-layer attention of the final prompt position to the BOS token,
/// max-pooled over heads.
pub fn bos_profile<T: Scalar>(model: &Model<T>, layout: &SequenceLayout) -> Result<Vec<T>> {
    if layout.tokens().first() != Some(&BOS) {
        return Err(Error::InvalidInput("prompt does not start with BOS".into()));
    }
    let opts = ForwardOptions {
        record_bos: true,
        ..ForwardOptions::explicit()
    };
    let out = prefill_with(model, layout, None, opts)?;
    Ok(out.bos_attention.unwrap_or_default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StartLayer {
    pub layer: usize,
    /// No layer reached the threshold; `layer` is 0.
    pub fallback: bool,
}

/// First layer whose BOS attention reaches `theta`.
pub fn suggest_start_layer<T: Scalar>(profile: &[T], theta: T) -> StartLayer {
    match profile.iter().position(|&a| a >= theta) {
        Some(layer) => StartLayer {
            layer,
            fallback: false,
        },
        None => {
            log::warn!("no layer reaches BOS attention {theta}; starting guidance at layer 0");
            StartLayer {
                layer: 0,
                fallback: true,
            }
        }
    }
}
