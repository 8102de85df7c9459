//! Independent reference implementations used as test oracles. Nothing here
//! calls the library's kernels; it works on plain nested vectors in f64.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vgalab::model::{random_model, Grid, Model, ModelConfig, SequenceLayout, TokenId, Vocabulary};
use vgalab::numerics::Matrix;

pub type Rows = Vec<Vec<f64>>;

pub fn rows_of(m: &Matrix<f64>) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn matrix(rows: &Rows) -> Matrix<f64> {
    Matrix::from_rows(rows).unwrap()
}

fn mul(x: &[f64], w: &Matrix<f64>) -> Vec<f64> {
    (0..w.cols()).map(|c| x.iter().enumerate().map(|(r, &a)| a * w.get(r, c)).sum()).collect()
}

fn rms(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    x.iter().zip(gain).map(|(v, g)| v / (ms + 1e-6).sqrt() * g).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Additive guidance on the last query row: `head_scale[h] * g` is added to
/// the weights of keys `visual_start..visual_start + g.len()`.
pub struct RefGuidance<'a> {
    pub g: &'a [f64],
    pub visual_start: usize,
    pub head_scale: &'a [f64],
}

/// Causal attention where query `i` sits at key position `n_k - n_q + i`.
/// Returns the outputs and, per head, each query row's weights.
pub fn ref_attention(q: &Rows, k: &Rows, v: &Rows, n_heads: usize, guidance: Option<&RefGuidance>) -> (Rows, Vec<Rows>) {
    let (n_q, n_k) = (q.len(), k.len());
    let d = q[0].len();
    let dh = d / n_heads;
    let mut z = vec![vec![0.0; d]; n_q];
    let mut weights = vec![Vec::new(); n_heads];
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n_q {
            let pos = n_k - n_q + i;
            let scores: Vec<f64> = (0..=pos)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mut a = softmax(&scores);
            if let Some(gd) = guidance {
                if i == n_q - 1 {
                    for (t, &w) in gd.g.iter().enumerate() {
                        a[gd.visual_start + t] += gd.head_scale[h] * w;
                    }
                }
            }
            for (j, &w) in a.iter().enumerate() {
                for c in cols.clone() {
                    z[i][c] += w * v[j][c];
                }
            }
            a.resize(n_k, 0.0);
            weights[h].push(a);
        }
    }
    (z, weights)
}

/// Full no-cache forward over `tokens`; logits at every position.
pub fn ref_forward(model: &Model<f64>, tokens: &[TokenId]) -> Rows {
    let n_heads = model.config().n_heads;
    let mut x: Rows = tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| model.tok_embed().row(t).iter().zip(model.pos_embed().row(i)).map(|(a, b)| a + b).collect())
        .collect();
    for layer in model.layers() {
        let h: Rows = x.iter().map(|r| rms(r, &layer.norm1)).collect();
        let q: Rows = h.iter().map(|r| mul(r, &layer.wq)).collect();
        let k: Rows = h.iter().map(|r| mul(r, &layer.wk)).collect();
        let v: Rows = h.iter().map(|r| mul(r, &layer.wv)).collect();
        let (z, _) = ref_attention(&q, &k, &v, n_heads, None);
        for (xr, zr) in x.iter_mut().zip(&z) {
            for (a, b) in xr.iter_mut().zip(mul(zr, &layer.wo)) {
                *a += b;
            }
        }
        for xr in x.iter_mut() {
            let hid: Vec<f64> = mul(&rms(xr, &layer.norm2), &layer.mlp_w1).into_iter().map(gelu).collect();
            for (a, b) in xr.iter_mut().zip(mul(&hid, &layer.mlp_w2)) {
                *a += b;
            }
        }
    }
    x.iter().map(|r| mul(r, model.unembed())).collect()
}

/// Greedy decoding by full recompute at every step, lowest id on ties.
pub fn ref_greedy(model: &Model<f64>, prompt: &[TokenId], max_len: usize) -> (Vec<TokenId>, Rows) {
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    let mut logits = Vec::new();
    while out.len() < max_len {
        let last = ref_forward(model, &seq).pop().unwrap();
        let mut best = 0;
        for (i, &l) in last.iter().enumerate() {
            if l > last[best] {
                best = i;
            }
        }
        logits.push(last);
        out.push(best);
        seq.push(best);
        if best == vgalab::model::vocab::EOS {
            break;
        }
    }
    (out, logits)
}

pub fn small_vocab() -> Vocabulary {
    Vocabulary::new(&["dog", "cat", "car", "tree"], 4).unwrap()
}

/// A random model with the given shape on a `grid`.
pub fn small_model(seed: u64, n_layers: usize, n_heads: usize, d_head: usize, grid: Grid) -> Model<f64> {
    let vocab = small_vocab();
    let d = n_heads * d_head;
    let config = ModelConfig {
        n_layers,
        n_heads,
        d_model: d,
        d_ff: 2 * d,
        vocab_size: vocab.len(),
        max_seq_len: 1 + grid.len() + 24,
        grid,
    };
    random_model(config, vocab, seed).unwrap()
}

/// BOS, random patch/background tokens, then 1..=4 random text tokens.
pub fn random_prompt(model: &Model<f64>, rng: &mut ChaCha8Rng) -> SequenceLayout {
    let vocab = model.vocab();
    let m = model.config().grid.len();
    let patches: Vec<TokenId> = (0..m)
        .map(|_| {
            if rng.random_bool(0.5) {
                vocab.patch_token(rng.random_range(0..vocab.n_objects()))
            } else {
                vocab.background_token(rng.random_range(0..vocab.n_background()))
            }
        })
        .collect();
    let n_text = rng.random_range(1..=4);
    let text: Vec<TokenId> = (0..n_text).map(|_| rng.random_range(2..vocab.len())).collect();
    SequenceLayout::with_text(&patches, &text).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `|a - b| <= tol * max(1, |a|, |b|)` elementwise.
pub fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * 1f64.max(x.abs()).max(y.abs()))
}
