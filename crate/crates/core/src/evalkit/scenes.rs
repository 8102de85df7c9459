//! Synthetic scenes: axis-aligned object rectangles on the patch grid.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::MaskAnnotation;
use crate::model::{Grid, TokenId, Vocabulary};

/// How absent objects are picked for "no" questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSampling {
    /// Uniform over absent objects.
    #[default]
    Random,
    /// Most frequent absent objects first.
    Popular,
    /// Co-occurrence partners of present objects first.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub n_scenes: usize,
    pub grid: Grid,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Side length range of object rectangles, in patch units.
    pub min_side: f64,
    pub max_side: f64,
    /// Upper bound on questions per label and scene.
    pub questions_per_label: usize,
    pub negative: NegativeSampling,
    /// Chance that a placed object brings its co-occurrence partner along.
    pub partner_rate: f64,
    /// Place rectangles on whole patches. Off, masks hold fractional
    /// coverage and a patch shows the object once it is half covered.
    pub snap_to_grid: bool,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            n_scenes: 100,
            grid: Grid::new(8, 8),
            min_objects: 1,
            max_objects: 3,
            min_side: 1.0,
            max_side: 4.0,
            questions_per_label: 3,
            negative: NegativeSampling::Random,
            partner_rate: 0.5,
            snap_to_grid: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Present,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub word: String,
    pub label: Label,
}

impl Question {
    pub fn text(&self) -> String {
        format!("Is there a {} in the image?", self.word)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// Token id of every patch, row-major.
    pub patches: Vec<TokenId>,
    pub objects: Vec<MaskAnnotation>,
    pub questions: Vec<Question>,
    /// Objects a faithful description mentions.
    pub annotated: Vec<String>,
    /// Absent objects that a model is likely to hallucinate.
    pub hallu_targets: Vec<String>,
}

impl Scene {
    pub fn mask(&self, word: &str) -> Option<&MaskAnnotation> {
        self.objects.iter().find(|o| o.word == word)
    }

    /// Pointwise max of all object masks.
    pub fn union_mask(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.patches.len()];
        for o in &self.objects {
            for (u, &g) in out.iter_mut().zip(&o.overlaps) {
                *u = u.max(g);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSet {
    pub grid: Grid,
    pub scenes: Vec<Scene>,
}

impl SceneSet {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: SceneSet = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }

    /// Checks sizes and the present/absent contract of every question.
    pub fn validate(&self) -> Result<()> {
        let m = self.grid.len();
        for (i, s) in self.scenes.iter().enumerate() {
            if s.patches.len() != m || s.objects.iter().any(|o| o.overlaps.len() != m) {
                return Err(Error::InvalidInput(format!("scene {i} does not match the {m}-patch grid")));
            }
            for q in &s.questions {
                let present = s.mask(&q.word).is_some();
                if present != (q.label == Label::Present) {
                    return Err(Error::InvalidInput(format!(
                        "scene {i}: question about `{}` mislabeled",
                        q.word
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_questions(&self) -> usize {
        self.scenes.iter().map(|s| s.questions.len()).sum()
    }
}

/// Co-occurrence partner of object `k`: objects pair up as (0, 1), (2, 3), ...
pub fn partner(k: usize, n_objects: usize) -> Option<usize> {
    let p = k ^ 1;
    (p < n_objects).then_some(p)
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn intersects(&self, o: &Rect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }

    /// Covered fraction of the unit patch at (`r`, `c`).
    fn coverage(&self, r: usize, c: usize) -> f64 {
        let w = (self.x1.min(c as f64 + 1.0) - self.x0.max(c as f64)).max(0.0);
        let h = (self.y1.min(r as f64 + 1.0) - self.y0.max(r as f64)).max(0.0);
        w * h
    }
}

/// Popularity weight of object `k`; earlier objects are more common.
fn popularity(k: usize) -> f64 {
    1.0 / (1.0 + k as f64).sqrt()
}

fn check_params(p: &SceneParams, vocab: &Vocabulary) -> Result<()> {
    let n = vocab.n_objects();
    let m = p.grid.len();
    if m == 0 {
        return Err(Error::InvalidParams("empty grid".into()));
    }
    if p.min_objects == 0 || p.min_objects > p.max_objects {
        return Err(Error::InvalidParams(format!(
            "object count range {}..={} is empty or starts at 0",
            p.min_objects, p.max_objects
        )));
    }
    if p.max_objects > m {
        return Err(Error::InvalidParams(format!(
            "{} objects cannot fit on {m} patches",
            p.max_objects
        )));
    }
    if p.max_objects >= n {
        return Err(Error::InvalidParams(format!(
            "{} objects per scene leave no absent object among {n}",
            p.max_objects
        )));
    }
    let max_dim = p.grid.rows.min(p.grid.cols) as f64;
    if !(p.min_side > 0.0 && p.min_side <= p.max_side && p.max_side <= max_dim) {
        return Err(Error::InvalidParams(format!(
            "side range {}..{} invalid for a {}x{} grid",
            p.min_side, p.max_side, p.grid.rows, p.grid.cols
        )));
    }
    if p.snap_to_grid && p.min_side.ceil() > p.max_side.floor() {
        return Err(Error::InvalidParams(format!(
            "side range {}..{} holds no whole patch count",
            p.min_side, p.max_side
        )));
    }
    if vocab.n_background() == 0 {
        return Err(Error::InvalidParams("vocabulary has no background tokens".into()));
    }
    Ok(())
}

/// Generates `params.n_scenes` scenes. Deterministic in `(params, seed)`.
pub fn make_scenes(params: &SceneParams, vocab: &Vocabulary, seed: u64) -> Result<SceneSet> {
    check_params(params, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes = Vec::with_capacity(params.n_scenes);
    while scenes.len() < params.n_scenes {
        if let Some(s) = try_scene(params, vocab, &mut rng) {
            scenes.push(s);
        }
    }
    Ok(SceneSet {
        grid: params.grid,
        scenes,
    })
}

fn pick_objects(params: &SceneParams, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let count = rng.random_range(params.min_objects..=params.max_objects);
    let weights: Vec<f64> = (0..n).map(popularity).collect();
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    while chosen.len() < count {
        let total: f64 = (0..n).filter(|k| !chosen.contains(k)).map(|k| weights[k]).sum();
        let mut t = rng.random::<f64>() * total;
        let mut pick = None;
        for k in (0..n).filter(|k| !chosen.contains(k)) {
            pick = Some(k);
            t -= weights[k];
            if t <= 0.0 {
                break;
            }
        }
        let k = pick.expect("an object is left to pick");
        chosen.push(k);
        if chosen.len() < count && rng.random::<f64>() < params.partner_rate {
            if let Some(p) = partner(k, n).filter(|p| !chosen.contains(p)) {
                chosen.push(p);
            }
        }
    }
    chosen
}

fn try_scene(params: &SceneParams, vocab: &Vocabulary, rng: &mut ChaCha8Rng) -> Option<Scene> {
    let n = vocab.n_objects();
    let grid = params.grid;
    let m = grid.len();
    let objects = pick_objects(params, n, rng);

    // Snapped rectangles cover whole patches, so masks are binary.
    let side = |rng: &mut ChaCha8Rng| {
        let (lo, hi) = (params.min_side, params.max_side);
        if params.snap_to_grid {
            rng.random_range(lo.ceil() as usize..=hi.floor() as usize) as f64
        } else {
            rng.random_range(lo..=hi)
        }
    };
    let place = |rng: &mut ChaCha8Rng, room: f64| {
        if params.snap_to_grid {
            rng.random_range(0..=room.floor() as usize) as f64
        } else {
            rng.random_range(0.0..=room)
        }
    };
    let mut rects: Vec<Rect> = Vec::with_capacity(objects.len());
    for _ in &objects {
        let placed = (0..100).find_map(|_| {
            let (w, h) = (side(rng), side(rng));
            let x0 = place(rng, grid.cols as f64 - w);
            let y0 = place(rng, grid.rows as f64 - h);
            let r = Rect {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
            };
            (!rects.iter().any(|o| o.intersects(&r))).then_some(r)
        });
        rects.push(placed?);
    }

    let mut patches: Vec<TokenId> = (0..m)
        .map(|_| vocab.background_token(rng.random_range(0..vocab.n_background())))
        .collect();
    let mut masks = Vec::with_capacity(objects.len());
    for (&k, rect) in objects.iter().zip(&rects) {
        let overlaps: Vec<f64> = (0..m)
            .map(|i| rect.coverage(i / grid.cols, i % grid.cols).clamp(0.0, 1.0))
            .collect();
        for (i, &g) in overlaps.iter().enumerate() {
            if g >= 0.5 {
                patches[i] = vocab.patch_token(k);
            }
        }
        let word = vocab.object_words()[k].clone();
        masks.push(MaskAnnotation::new(word, overlaps).ok()?);
    }

    // every object must show on at least one patch
    if objects.iter().any(|&k| !patches.contains(&vocab.patch_token(k))) {
        return None;
    }

    let present: BTreeSet<usize> = objects.iter().copied().collect();
    let absent: Vec<usize> = (0..n).filter(|k| !present.contains(k)).collect();
    let q = params.questions_per_label.min(present.len()).min(absent.len());
    let mut positives = objects.clone();
    positives.shuffle(rng);
    positives.truncate(q);
    let negatives = pick_negatives(params.negative, &objects, &absent, q, n, rng);

    let word = |k: usize| vocab.object_words()[k].clone();
    let mut questions: Vec<Question> = positives
        .iter()
        .map(|&k| Question {
            word: word(k),
            label: Label::Present,
        })
        .chain(negatives.iter().map(|&k| Question {
            word: word(k),
            label: Label::Absent,
        }))
        .collect();
    questions.shuffle(rng);

    let hallu_targets = objects
        .iter()
        .filter_map(|&k| partner(k, n))
        .filter(|p| !present.contains(p))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(word)
        .collect();
    Some(Scene {
        patches,
        objects: masks,
        questions,
        annotated: objects.iter().map(|&k| word(k)).collect(),
        hallu_targets,
    })
}

fn pick_negatives(
    mode: NegativeSampling,
    present: &[usize],
    absent: &[usize],
    q: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut pool = absent.to_vec();
    pool.shuffle(rng);
    match mode {
        NegativeSampling::Random => {}
        NegativeSampling::Popular => pool.sort_by_key(|&k| k),
        NegativeSampling::Adversarial => {
            let partners: Vec<usize> = present.iter().filter_map(|&k| partner(k, n)).collect();
            // stable: partners first, the rest stays shuffled
            pool.sort_by_key(|k| !partners.contains(k));
        }
    }
    pool.truncate(q);
    pool
}
