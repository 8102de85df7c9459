use std::ops::Range;

use crate::error::{Error, Result};
use crate::numerics::{gelu, rms_norm, Matrix, Scalar};

use super::attention::{attention_explicit, attention_fused, GuidanceRow, GuidedRows};
use super::vocab::{TokenId, Vocabulary, BOS, DESCRIBE};
use super::weights::Model;

const RMS_EPS: f64 = 1e-6;

/// Prompt tokens plus the position of the visual span inside them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    tokens: Vec<TokenId>,
    visual_start: usize,
    visual_end: usize,
}

impl SequenceLayout {
    pub fn new(tokens: Vec<TokenId>, visual_start: usize, visual_end: usize) -> Result<Self> {
        if visual_start >= visual_end || visual_end > tokens.len() {
            return Err(Error::InvalidInput(format!(
                "visual span {visual_start}..{visual_end} invalid for a {}-token prompt",
                tokens.len()
            )));
        }
        Ok(Self {
            tokens,
            visual_start,
            visual_end,
        })
    }

    /// `<bos> patches... text...`
    pub fn with_text(patches: &[TokenId], text: &[TokenId]) -> Result<Self> {
        let mut tokens = Vec::with_capacity(1 + patches.len() + text.len());
        tokens.push(BOS);
        tokens.extend_from_slice(patches);
        tokens.extend_from_slice(text);
        Self::new(tokens, 1, 1 + patches.len())
    }

    /// Existence question `is there a <word>`.
    pub fn existence(vocab: &Vocabulary, patches: &[TokenId], word: TokenId) -> Result<Self> {
        if !vocab.is_object_word(word) {
            return Err(Error::InvalidInput(format!("token {word} is not an object word")));
        }
        let text = [super::vocab::IS, super::vocab::THERE, super::vocab::A, word];
        Self::with_text(patches, &text)
    }

    /// Captioning instruction `describe`.
    pub fn caption(patches: &[TokenId]) -> Result<Self> {
        Self::with_text(patches, &[DESCRIBE])
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn visual_start(&self) -> usize {
        self.visual_start
    }

    pub fn visual_end(&self) -> usize {
        self.visual_end
    }

    pub fn visual_range(&self) -> Range<usize> {
        self.visual_start..self.visual_end
    }

    /// Number of visual tokens.
    pub fn visual_len(&self) -> usize {
        self.visual_end - self.visual_start
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Per-layer keys and values accumulated across positions.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    keys: Vec<Matrix<T>>,
    values: Vec<Matrix<T>>,
    visual: Range<usize>,
    forwarded: usize,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(n_layers: usize, visual: Range<usize>) -> Self {
        Self {
            keys: vec![Matrix::zeros(0, 0); n_layers],
            values: vec![Matrix::zeros(0, 0); n_layers],
            visual,
            forwarded: 0,
        }
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keys(&self, layer: usize) -> &Matrix<T> {
        &self.keys[layer]
    }

    pub fn values(&self, layer: usize) -> &Matrix<T> {
        &self.values[layer]
    }

    pub fn visual_range(&self) -> Range<usize> {
        self.visual.clone()
    }

    /// Token positions pushed through the decoder so far.
    pub fn forward_passes(&self) -> usize {
        self.forwarded
    }
}

/// Per-layer guidance callback invoked on the attention output of guided
/// query rows. `visual_values` holds the value rows of the visual span for
/// that layer, all heads side by side.
pub trait AttentionHook<T: Scalar> {
    fn is_active(&self, layer: usize) -> bool;

    fn guided_rows(&self) -> GuidedRows {
        GuidedRows::Last
    }

    /// Fused path: rewrite the attention output row in place.
    fn guide_output(&mut self, layer: usize, z_row: &mut [T], visual_values: &Matrix<T>) -> Result<()>;

    /// Explicit path: the additive weight row to fold into the attention
    /// weights, given the unguided output row.
    fn guidance_row(&mut self, layer: usize, z_row: &[T], visual_values: &Matrix<T>) -> Result<GuidanceRow<T>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionPath {
    #[default]
    Fused,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardOptions {
    pub path: AttentionPath,
    /// Record the final query row's attention to position 0, max over heads.
    /// Requires the explicit path.
    pub record_bos: bool,
}

impl ForwardOptions {
    pub fn explicit() -> Self {
        Self {
            path: AttentionPath::Explicit,
            record_bos: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrefillResult<T> {
    pub cache: KvCache<T>,
    /// `(m, V)` logits at the visual positions.
    pub visual_logits: Matrix<T>,
    pub last_logits: Vec<T>,
    /// Per-layer BOS attention of the final query row (explicit path only).
    pub bos_attention: Option<Vec<T>>,
}

struct ChunkOutput<T> {
    visual_logits: Matrix<T>,
    last_logits: Vec<T>,
    bos: Option<Vec<T>>,
}

fn norm_rows<T: Scalar>(x: &Matrix<T>, gain: &[T]) -> Matrix<T> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        out.row_mut(r)
            .copy_from_slice(&rms_norm(x.row(r), gain, T::lit(RMS_EPS)));
    }
    out
}

fn add_into<T: Scalar>(x: &mut Matrix<T>, y: &Matrix<T>) {
    for (a, &b) in x.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *a += b;
    }
}

fn forward_chunk<T: Scalar>(
    model: &Model<T>,
    cache: &mut KvCache<T>,
    tokens: &[TokenId],
    mut hook: Option<&mut dyn AttentionHook<T>>,
    opts: ForwardOptions,
) -> Result<ChunkOutput<T>> {
    let cfg = model.config();
    let start = cache.len();
    let n = tokens.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty token chunk".into()));
    }
    if start + n > cfg.max_seq_len {
        return Err(Error::Capacity(format!(
            "{} positions exceed max_seq_len {}",
            start + n,
            cfg.max_seq_len
        )));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::Index(format!("token id {t} outside vocab of {}", cfg.vocab_size)));
    }
    if opts.record_bos && opts.path != AttentionPath::Explicit {
        return Err(Error::Config("BOS attention needs the explicit attention path".into()));
    }

    let d = cfg.d_model;
    let n_heads = cfg.n_heads;
    let mut x = Matrix::from_fn(n, d, |i, c| {
        model.tok_embed().get(tokens[i], c) + model.pos_embed().get(start + i, c)
    });
    let visual = cache.visual.clone();
    let end = start + n;
    let mut bos = opts.record_bos.then(|| Vec::with_capacity(cfg.n_layers));

    for (l, layer) in model.layers().iter().enumerate() {
        let h = norm_rows(&x, &layer.norm1);
        let q = h.matmul(&layer.wq)?;
        let k = h.matmul(&layer.wk)?;
        let v = h.matmul(&layer.wv)?;
        for r in 0..n {
            cache.keys[l].push_row(k.row(r))?;
            cache.values[l].push_row(v.row(r))?;
        }
        let keys = &cache.keys[l];
        let values = &cache.values[l];

        let guided: Vec<usize> = match hook.as_deref() {
            Some(hk) if hk.is_active(l) && visual.end <= end => {
                let rows = hk.guided_rows();
                (0..n)
                    .filter(|&i| {
                        let pos = start + i;
                        pos >= visual.end
                            && match rows {
                                GuidedRows::Last => i == n - 1,
                                GuidedRows::FromPosition(p) => pos >= p,
                            }
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        let visual_values = if guided.is_empty() {
            None
        } else {
            Some(values.slice_rows(visual.start, visual.end)?)
        };

        let z = match opts.path {
            AttentionPath::Fused => {
                let mut z = attention_fused(&q, keys, values, n_heads)?;
                if let (Some(hk), Some(vv)) = (hook.as_deref_mut(), visual_values.as_ref()) {
                    for &i in &guided {
                        hk.guide_output(l, z.row_mut(i), vv)?;
                    }
                }
                z
            }
            AttentionPath::Explicit => {
                let (mut z, alphas) = attention_explicit(&q, keys, values, n_heads, None)?;
                if let Some(b) = bos.as_mut() {
                    let w = alphas
                        .iter()
                        .map(|a| a.get(n - 1, 0))
                        .fold(T::neg_infinity(), T::max);
                    b.push(w);
                }
                if let (Some(hk), Some(vv)) = (hook.as_deref_mut(), visual_values.as_ref()) {
                    for &i in &guided {
                        let pos = start + i;
                        let mut g = hk.guidance_row(l, z.row(i), vv)?;
                        g.rows = GuidedRows::Last;
                        let qi = q.slice_rows(i, i + 1)?;
                        let ki = keys.slice_rows(0, pos + 1)?;
                        let vi = values.slice_rows(0, pos + 1)?;
                        let (zi, _) = attention_explicit(&qi, &ki, &vi, n_heads, Some(&g))?;
                        z.row_mut(i).copy_from_slice(zi.row(0));
                    }
                }
                z
            }
        };
        add_into(&mut x, &z.matmul(&layer.wo)?);

        let h2 = norm_rows(&x, &layer.norm2);
        let mut hidden = h2.matmul(&layer.mlp_w1)?;
        hidden.as_mut_slice().iter_mut().for_each(|a| *a = gelu(*a));
        add_into(&mut x, &hidden.matmul(&layer.mlp_w2)?);
    }

    let vis_lo = visual.start.max(start);
    let vis_hi = visual.end.min(end);
    let visual_logits = if vis_lo < vis_hi {
        x.slice_rows(vis_lo - start, vis_hi - start)?.matmul(model.unembed())?
    } else {
        Matrix::zeros(0, cfg.vocab_size)
    };
    let last_logits = model.unembed().left_mul(x.row(n - 1))?;
    cache.forwarded += n;
    Ok(ChunkOutput {
        visual_logits,
        last_logits,
        bos,
    })
}

fn check_layout<T: Scalar>(model: &Model<T>, layout: &SequenceLayout) -> Result<()> {
    let m = model.config().grid.len();
    if layout.visual_len() != m {
        return Err(Error::InvalidInput(format!(
            "layout has {} visual tokens but the model grid holds {m}",
            layout.visual_len()
        )));
    }
    Ok(())
}

/// One causal forward pass over the whole prompt.
pub fn prefill<T: Scalar>(
    model: &Model<T>,
    layout: &SequenceLayout,
    hook: Option<&mut dyn AttentionHook<T>>,
) -> Result<PrefillResult<T>> {
    prefill_with(model, layout, hook, ForwardOptions::default())
}

pub fn prefill_with<T: Scalar>(
    model: &Model<T>,
    layout: &SequenceLayout,
    hook: Option<&mut dyn AttentionHook<T>>,
    opts: ForwardOptions,
) -> Result<PrefillResult<T>> {
    check_layout(model, layout)?;
    let mut cache = KvCache::new(model.config().n_layers, layout.visual_range());
    let out = forward_chunk(model, &mut cache, layout.tokens(), hook, opts)?;
    Ok(PrefillResult {
        cache,
        visual_logits: out.visual_logits,
        last_logits: out.last_logits,
        bos_attention: out.bos,
    })
}

/// Forward pass over the prompt prefix up to the end of the visual span.
/// The remaining prompt tokens are fed later through [`extend`], so every
/// position is still processed exactly once.
pub fn prefill_visual<T: Scalar>(
    model: &Model<T>,
    layout: &SequenceLayout,
    opts: ForwardOptions,
) -> Result<PrefillResult<T>> {
    check_layout(model, layout)?;
    let mut cache = KvCache::new(model.config().n_layers, layout.visual_range());
    let out = forward_chunk(
        model,
        &mut cache,
        &layout.tokens()[..layout.visual_end()],
        None,
        opts,
    )?;
    Ok(PrefillResult {
        cache,
        visual_logits: out.visual_logits,
        last_logits: out.last_logits,
        bos_attention: out.bos,
    })
}

/// Appends `tokens` to the cache and returns the logits at the last one.
pub fn extend<T: Scalar>(
    model: &Model<T>,
    cache: &mut KvCache<T>,
    tokens: &[TokenId],
    hook: Option<&mut dyn AttentionHook<T>>,
    opts: ForwardOptions,
) -> Result<Vec<T>> {
    Ok(forward_chunk(model, cache, tokens, hook, opts)?.last_logits)
}

/// Feeds one token and returns the next-token logits.
pub fn decode_step<T: Scalar>(
    model: &Model<T>,
    cache: &mut KvCache<T>,
    token: TokenId,
    hook: Option<&mut dyn AttentionHook<T>>,
) -> Result<Vec<T>> {
    extend(model, cache, &[token], hook, ForwardOptions::default())
}

pub fn decode_step_with<T: Scalar>(
    model: &Model<T>,
    cache: &mut KvCache<T>,
    token: TokenId,
    hook: Option<&mut dyn AttentionHook<T>>,
    opts: ForwardOptions,
) -> Result<Vec<T>> {
    extend(model, cache, &[token], hook, opts)
}
