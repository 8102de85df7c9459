use crate::error::{Error, Result};
use crate::grounding::MaskAnnotation;
use crate::numerics::{argmax, Scalar};
use crate::vga::{init_session, VgaConfig, VgaSession};

use super::forward::{extend, prefill_visual, prefill_with, AttentionHook, ForwardOptions, SequenceLayout};
use super::vocab::{TokenId, EOS};
use super::weights::Model;

/// Default generation budget.
pub const DEFAULT_MAX_NEW_TOKENS: usize = 512;

/// What the guided pipeline needs besides the prompt.
#[derive(Debug, Clone, Copy)]
pub struct VgaRequest<'a> {
    pub config: &'a VgaConfig,
    /// Text the object words are extracted from.
    pub question: &'a str,
    /// Masks for ground-truth guidance.
    pub annotation: Option<&'a [MaskAnnotation]>,
}

#[derive(Debug, Clone)]
pub struct Generation<T> {
    /// Generated tokens, including a final EOS if one was produced.
    pub tokens: Vec<TokenId>,
    /// Positions pushed through the decoder.
    pub forward_passes: usize,
    /// Guidance state after the last step.
    pub session: Option<VgaSession<T>>,
}

fn pick<T: Scalar>(logits: &[T]) -> Result<TokenId> {
    argmax(logits).ok_or_else(|| Error::InvalidInput("empty logits".into()))
}

/// Greedy decoding with the fused attention path.
pub fn greedy_generate<T: Scalar>(
    model: &Model<T>,
    layout: &SequenceLayout,
    vga: Option<VgaRequest<'_>>,
    max_len: usize,
) -> Result<Generation<T>> {
    greedy_generate_with(model, layout, vga, max_len, ForwardOptions::default())
}

/// Greedy decoding until EOS or `max_len` tokens.
///
/// With a request the prompt is processed in two chunks: the prefix through
/// the visual span first, whose visual logits build the grounding, then the
/// remaining prompt tokens with guidance on. Every position still goes
/// through the decoder exactly once.
pub fn greedy_generate_with<T: Scalar>(
    model: &Model<T>,
    layout: &SequenceLayout,
    vga: Option<VgaRequest<'_>>,
    max_len: usize,
    opts: ForwardOptions,
) -> Result<Generation<T>> {
    if max_len == 0 {
        return Err(Error::InvalidInput("max_len must be at least 1".into()));
    }
    let opts = ForwardOptions {
        record_bos: false,
        ..opts
    };
    let (mut cache, first_logits, mut session) = match vga {
        None => {
            let pre = prefill_with(model, layout, None, opts)?;
            (pre.cache, pre.last_logits, None)
        }
        Some(req) => {
            let pre = prefill_visual(model, layout, opts)?;
            let mut session = init_session(
                model,
                layout,
                &pre.visual_logits,
                req.question,
                req.config,
                req.annotation,
            )?;
            let mut cache = pre.cache;
            let rest = &layout.tokens()[layout.visual_end()..];
            let logits = if rest.is_empty() {
                pre.last_logits
            } else {
                extend(model, &mut cache, rest, Some(&mut session as &mut dyn AttentionHook<T>), opts)?
            };
            (cache, logits, Some(session))
        }
    };

    let mut tokens = Vec::new();
    let mut next = pick(&first_logits)?;
    loop {
        tokens.push(next);
        if next == EOS || tokens.len() >= max_len {
            break;
        }
        if let Some(s) = session.as_mut() {
            s.pvg_update(next)?;
        }
        let hook = session.as_mut().map(|s| s as &mut dyn AttentionHook<T>);
        let logits = extend(model, &mut cache, &[next], hook, opts)?;
        next = pick(&logits)?;
    }
    Ok(Generation {
        tokens,
        forward_passes: cache.forward_passes(),
        session,
    })
}
