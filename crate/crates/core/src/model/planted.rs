//! Hand-wired decoder whose behaviour is known by construction.
//!
//! Residual stream layout (`d_model = 48` for eight objects):
//!
//! | dims       | meaning                                             |
//! |------------|-----------------------------------------------------|
//! | 0          | anchor, a large constant from the position table    |
//! | 1, 2, 3    | BOS / visual / text flags                           |
//! | 4, 5       | instruction words `is` / `describe`                 |
//! | 6, 7       | task mode (question / caption), written by layer 0  |
//! | 8          | "yes" evidence                                      |
//! | W block    | identity of a text object word                      |
//! | P block    | identity of an object patch (also read out as the word) |
//! | Rq block   | object evidence gathered for a question             |
//! | Rc block   | object evidence gathered for a caption              |
//! | junk, noise| sink output and background texture                  |
//!
//! Layer 0 has one head that copies the instruction into every text position.
//! Layer 1 carries the interesting heads: a question matcher whose queries
//! (object words) look for keys of matching patches, a caption head that looks
//! at any object patch, two heads that mostly sit on BOS, and an MLP that turns
//! gathered evidence into a "yes" or into object words. Layers 2 and up only
//! hold BOS-sink heads. The key noise `sigma` corrupts the matcher's key
//! projection so vanilla localization degrades while the patches' own logits
//! (and therefore their grounding) stay intact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar};

use super::config::{Grid, ModelConfig};
use super::vocab::{Vocabulary, A, BOS, DESCRIBE, EOS, IS, NO, THERE, YES};
use super::weights::{Layer, Model};

/// Objects used when a spec does not name its own. Neighbouring pairs
/// (dog/cat, car/person, ...) are co-occurrence partners in generated scenes.
pub const DEFAULT_OBJECTS: [&str; 8] = ["dog", "cat", "car", "person", "tree", "bird", "cup", "chair"];

/// Magnitudes of the planted circuits. The defaults are calibrated for the
/// default object set and grid; they are exposed for experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedGains {
    /// Anchor value; dominates the RMS so normalization is nearly constant.
    pub anchor: f64,
    /// Logit gain from a patch's identity to its word.
    pub readout: f64,
    /// Logit penalty on object words at any visual position.
    pub visual_penalty: f64,
    /// Std of the identity block of background patch embeddings.
    pub background_identity_std: f64,
    /// Std of the texture dims of background patch embeddings.
    pub background_texture_std: f64,
    /// Matcher score of a query word against a matching patch.
    pub match_score: f64,
    /// Caption head score of an object patch.
    pub caption_score: f64,
    /// BOS score of the sink heads.
    pub sink_score: f64,
    /// Common visual component in the values of the non-matcher heads.
    pub sink_value: f64,
    /// Patch identity carried by the value of the question sink head.
    pub evidence_value: f64,
    /// Patch identity the question sink head adds to caption evidence.
    pub caption_evidence: f64,
    /// Score of earlier object words in the repetition head.
    pub said_score: f64,
    /// Weight of the repetition penalty on caption evidence.
    pub said_penalty: f64,
    /// Question evidence needed for "yes".
    pub yes_threshold: f64,
    /// Caption evidence needed to name an object.
    pub caption_threshold: f64,
    /// MLP unit sharpness.
    pub unit_gain: f64,
    pub yes_gain: f64,
    pub no_bias: f64,
    pub eos_bias: f64,
    /// Scale of the object-word output of caption units.
    pub caption_gain: f64,
}

impl Default for PlantedGains {
    fn default() -> Self {
        Self {
            anchor: 20.0,
            readout: 20.0,
            visual_penalty: 3.0,
            background_identity_std: 0.05,
            background_texture_std: 0.3,
            match_score: 8.0,
            caption_score: 4.0,
            sink_score: 7.0,
            sink_value: 2.0,
            evidence_value: 3.0,
            caption_evidence: 3.0,
            said_score: 8.0,
            said_penalty: 12.0,
            yes_threshold: 0.5,
            caption_threshold: 0.2,
            unit_gain: 10.0,
            yes_gain: 1.0,
            no_bias: 2.0,
            eos_bias: 2.0,
            caption_gain: 0.22,
        }
    }
}

/// Recipe for [`build_planted_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedSpec {
    pub objects: Vec<String>,
    pub n_background: usize,
    pub grid: Grid,
    /// Std of the noise added to the matcher's key projection.
    pub sigma: f64,
    pub n_layers: usize,
    /// Longest generation the position table must hold beyond the prompt.
    pub max_new_tokens: usize,
    #[serde(default)]
    pub gains: PlantedGains,
    /// Vocabulary to build for; defaults to one made from `objects`. Every
    /// entry of `objects` must be one of its object words.
    #[serde(default)]
    pub vocab: Option<Vocabulary>,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            objects: DEFAULT_OBJECTS.iter().map(|s| s.to_string()).collect(),
            n_background: 8,
            grid: Grid::new(8, 8),
            sigma: 0.0,
            n_layers: 4,
            max_new_tokens: 512,
            gains: PlantedGains::default(),
            vocab: None,
        }
    }
}

const N_HEADS: usize = 4;
const N_TEXTURE: usize = 6;
/// Longest text a prompt carries after the visual span.
const MAX_PROMPT_TEXT: usize = 8;

struct Dims {
    n: usize,
}

impl Dims {
    const ANCHOR: usize = 0;
    const BOS: usize = 1;
    const VISUAL: usize = 2;
    const TEXT: usize = 3;
    const INSTR_VQA: usize = 4;
    const INSTR_CAP: usize = 5;
    const MODE_VQA: usize = 6;
    const MODE_CAP: usize = 7;
    const YES: usize = 8;
    /// Set on the answer tokens so the reply stops after one word.
    const ANSWER: usize = 9;
    const FIXED: usize = 10;

    fn w(&self, o: usize) -> usize {
        Self::FIXED + o
    }
    fn p(&self, o: usize) -> usize {
        Self::FIXED + self.n + o
    }
    fn rq(&self, o: usize) -> usize {
        Self::FIXED + 2 * self.n + o
    }
    fn rc(&self, o: usize) -> usize {
        Self::FIXED + 3 * self.n + o
    }
    fn junk(&self) -> usize {
        Self::FIXED + 4 * self.n
    }
    fn texture(&self, t: usize) -> usize {
        self.junk() + 1 + t
    }
    fn used(&self) -> usize {
        self.texture(N_TEXTURE)
    }
    /// Residual width, rounded up so the heads are wide enough for the
    /// object blocks.
    fn d_model(&self) -> usize {
        let d_head = (self.n + 1).max(self.used().div_ceil(N_HEADS));
        N_HEADS * d_head
    }
}

fn zeros(r: usize, c: usize) -> Matrix<f64> {
    Matrix::zeros(r, c)
}

/// Builds the planted model. Deterministic in `(spec, seed)`.
pub fn build_planted_model<T: Scalar>(spec: &PlantedSpec, seed: u64) -> Result<Model<T>> {
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::InvalidSpec(format!("sigma must be finite and >= 0, got {}", spec.sigma)));
    }
    if spec.n_layers < 2 {
        return Err(Error::InvalidSpec("the planted circuit needs at least 2 layers".into()));
    }
    if spec.objects.is_empty() {
        return Err(Error::InvalidSpec("no object words".into()));
    }
    let vocab = match &spec.vocab {
        Some(v) => v.clone(),
        None => Vocabulary::new(&spec.objects, spec.n_background)
            .map_err(|e| Error::InvalidSpec(e.to_string()))?,
    };
    for o in &spec.objects {
        match vocab.id(o) {
            Some(id) if vocab.is_object_word(id) => {}
            _ => return Err(Error::InvalidSpec(format!("object word `{o}` is not in the vocabulary"))),
        }
    }
    let g = &spec.gains;
    let n = vocab.n_objects();
    let dims = Dims { n };
    let d = dims.d_model();
    let dh = d / N_HEADS;
    let v_size = vocab.len();
    let m = spec.grid.len();
    let config = ModelConfig {
        n_layers: spec.n_layers,
        n_heads: N_HEADS,
        d_model: d,
        d_ff: 4 * d,
        vocab_size: v_size,
        max_seq_len: 1 + m + MAX_PROMPT_TEXT + spec.max_new_tokens,
        grid: spec.grid,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    // Token embeddings.
    let mut tok = zeros(v_size, d);
    tok.set(BOS, Dims::BOS, 1.0);
    for t in [EOS, YES, NO, THERE, A] {
        tok.set(t, Dims::TEXT, 1.0);
    }
    tok.set(YES, Dims::ANSWER, 1.0);
    tok.set(NO, Dims::ANSWER, 1.0);
    tok.set(IS, Dims::TEXT, 1.0);
    tok.set(IS, Dims::INSTR_VQA, 1.0);
    tok.set(DESCRIBE, Dims::TEXT, 1.0);
    tok.set(DESCRIBE, Dims::INSTR_CAP, 1.0);
    for o in 0..n {
        let w = vocab.object_token(o);
        tok.set(w, Dims::TEXT, 1.0);
        tok.set(w, dims.w(o), 1.0);
        let p = vocab.patch_token(o);
        tok.set(p, Dims::VISUAL, 1.0);
        tok.set(p, dims.p(o), 1.0);
    }
    for b in 0..vocab.n_background() {
        let t = vocab.background_token(b);
        tok.set(t, Dims::VISUAL, 1.0);
        for o in 0..n {
            tok.set(t, dims.p(o), g.background_identity_std * unit.sample(&mut rng));
        }
        for x in 0..N_TEXTURE {
            tok.set(t, dims.texture(x), g.background_texture_std * unit.sample(&mut rng));
        }
    }

    let mut pos = zeros(config.max_seq_len, d);
    for p in 0..config.max_seq_len {
        pos.set(p, Dims::ANCHOR, g.anchor);
    }

    // Normalization keeps the scale of the residual: the anchor dominates
    // the RMS, so the gain that undoes it is nearly content independent.
    let gain = vec![g.anchor / (d as f64).sqrt(); d];
    let blank = |_: ()| Layer {
        wq: zeros(d, d),
        wk: zeros(d, d),
        wv: zeros(d, d),
        wo: zeros(d, d),
        norm1: gain.clone(),
        norm2: gain.clone(),
        mlp_w1: zeros(d, config.d_ff),
        mlp_w2: zeros(config.d_ff, d),
    };
    let col = |head: usize, c: usize| head * dh + c;

    // BOS sink in head `h`: every query scores BOS at `sink_score`; the value
    // carries a shared visual component.
    let sink = |l: &mut Layer<f64>, h: usize| {
        l.wq.set(Dims::ANCHOR, col(h, 0), 1.0 / g.anchor);
        l.wk.set(Dims::BOS, col(h, 0), g.sink_score);
        l.wv.set(Dims::BOS, col(h, 0), g.sink_value);
        l.wv.set(Dims::VISUAL, col(h, 0), g.sink_value);
        l.wo.set(col(h, 0), dims.junk(), 1.0);
    };

    let mut layers = Vec::with_capacity(spec.n_layers);

    // Layer 0: instruction to mode.
    let mut l0 = blank(());
    l0.wq.set(Dims::TEXT, col(0, 0), 12.0);
    l0.wk.set(Dims::INSTR_VQA, col(0, 0), 1.0);
    l0.wk.set(Dims::INSTR_CAP, col(0, 0), 1.0);
    l0.wv.set(Dims::INSTR_VQA, col(0, 1), 1.0);
    l0.wv.set(Dims::INSTR_CAP, col(0, 2), 1.0);
    l0.wo.set(col(0, 1), Dims::MODE_VQA, 1.0);
    l0.wo.set(col(0, 2), Dims::MODE_CAP, 1.0);
    layers.push(l0);

    // Layer 1: evidence gathering.
    let mut l1 = blank(());
    let root = g.match_score.sqrt();
    // Head 0: object word looks for its patches.
    for o in 0..n {
        l1.wq.set(dims.w(o), col(0, o), root);
        l1.wk.set(dims.p(o), col(0, o), root);
        l1.wv.set(dims.p(o), col(0, o), 1.0);
        l1.wo.set(col(0, o), dims.rq(o), 1.0);
    }
    // Outside questions the matcher rests on BOS, and like the other heads
    // it carries a common visual value.
    l1.wq.set(Dims::MODE_CAP, col(0, n), g.sink_score * 2.0);
    l1.wk.set(Dims::BOS, col(0, n), 1.0);
    l1.wv.set(Dims::BOS, col(0, dh - 1), g.sink_value);
    l1.wv.set(Dims::VISUAL, col(0, dh - 1), g.sink_value);
    l1.wo.set(col(0, dh - 1), dims.junk(), 1.0);
    if spec.sigma > 0.0 {
        let noisy_inputs: Vec<usize> = [Dims::BOS, Dims::VISUAL, Dims::TEXT]
            .into_iter()
            .chain((0..n).map(|o| dims.p(o)))
            .chain((0..N_TEXTURE).map(|x| dims.texture(x)))
            .collect();
        for &i in &noisy_inputs {
            for o in 0..n {
                let cur = l1.wk.get(i, col(0, o));
                l1.wk.set(i, col(0, o), cur + spec.sigma * root * unit.sample(&mut rng));
            }
        }
    }
    // Head 1: caption gaze over object patches.
    l1.wq.set(Dims::MODE_CAP, col(1, 0), g.caption_score);
    for o in 0..n {
        l1.wk.set(dims.p(o), col(1, 0), 1.0);
        l1.wv.set(dims.p(o), col(1, 1 + o), 1.0);
        l1.wo.set(col(1, 1 + o), dims.rc(o), 1.0);
    }
    l1.wk.set(Dims::TEXT, col(1, 0), -4.0);
    l1.wv.set(Dims::VISUAL, col(1, dh - 1), g.sink_value);
    l1.wv.set(Dims::BOS, col(1, dh - 1), g.sink_value);
    l1.wo.set(col(1, dh - 1), dims.junk(), 1.0);
    // Head 2: sink that also reads patch identity into question evidence.
    sink(&mut l1, 2);
    for o in 0..n {
        l1.wv.set(dims.p(o), col(2, 1 + o), g.evidence_value);
        l1.wo.set(col(2, 1 + o), dims.rq(o), 1.0);
        l1.wo.set(col(2, 1 + o), dims.rc(o), g.caption_evidence / g.evidence_value);
    }
    // Head 3: text positions look back at earlier object words and subtract
    // them from caption evidence, falling back to BOS.
    l1.wq.set(Dims::TEXT, col(3, 0), 1.0);
    l1.wk.set(Dims::BOS, col(3, 0), g.sink_score / 2.0);
    for o in 0..n {
        l1.wk.set(dims.w(o), col(3, 0), g.said_score);
        l1.wv.set(dims.w(o), col(3, 1 + o), 1.0);
        l1.wo.set(col(3, 1 + o), dims.rc(o), -g.said_penalty);
    }
    l1.wv.set(Dims::BOS, col(3, dh - 1), g.sink_value);
    l1.wv.set(Dims::VISUAL, col(3, dh - 1), g.sink_value);
    l1.wo.set(col(3, dh - 1), dims.junk(), 1.0);

    // MLP: per-object "yes" units and caption units. The anchor acts as a
    // bias input.
    let u = g.unit_gain;
    let bias = |x: f64| x / g.anchor;
    for o in 0..n {
        let yes_unit = o;
        l1.mlp_w1.set(dims.w(o), yes_unit, u);
        l1.mlp_w1.set(dims.rq(o), yes_unit, u);
        l1.mlp_w1.set(Dims::MODE_VQA, yes_unit, 2.0 * u);
        l1.mlp_w1.set(Dims::ANCHOR, yes_unit, -u * bias(3.0 + g.yes_threshold));
        l1.mlp_w2.set(yes_unit, Dims::YES, g.yes_gain);

        let cap_unit = n + o;
        l1.mlp_w1.set(dims.rc(o), cap_unit, u);
        l1.mlp_w1.set(Dims::MODE_CAP, cap_unit, 2.0 * u);
        l1.mlp_w1.set(Dims::ANCHOR, cap_unit, -u * bias(2.0 + g.caption_threshold));
        l1.mlp_w2.set(cap_unit, dims.p(o), g.caption_gain);
    }
    layers.push(l1);

    for _ in 2..spec.n_layers {
        let mut l = blank(());
        for h in 0..N_HEADS {
            sink(&mut l, h);
        }
        layers.push(l);
    }

    // Attention divides scores by sqrt(d_head); fold that back into the
    // queries so the gains above are raw scores.
    let q_scale = (dh as f64).sqrt();
    for l in &mut layers {
        for x in l.wq.as_mut_slice() {
            *x *= q_scale;
        }
    }

    let mut unembed = zeros(d, v_size);
    for o in 0..n {
        let w = vocab.object_token(o);
        unembed.set(dims.p(o), w, g.readout);
        unembed.set(Dims::VISUAL, w, -g.visual_penalty);
    }
    unembed.set(Dims::YES, YES, 1.0);
    unembed.set(Dims::MODE_VQA, NO, g.no_bias);
    unembed.set(Dims::MODE_CAP, EOS, g.eos_bias);
    unembed.set(Dims::ANSWER, EOS, g.readout);

    let model = Model::new(config, vocab, tok, pos, layers, unembed)?;
    Ok(model.cast())
}
