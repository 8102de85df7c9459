//! `vgalab` command-line frontend.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::SystemTime;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use vgalab::evalkit::{
    bench_ttft, discriminative_config, export_heatmap, make_scenes, run_caption_eval, run_existence_eval,
    scene_visual_logits, EvalReport, NegativeSampling, Prompt, RunMetadata, Scene, SceneParams, SceneSet,
};
use vgalab::grounding::{merge_groundings, object_grounding, vss, VssSign, DEFAULT_TOP_K};
use vgalab::model::{
    build_planted_model, greedy_generate, load_model, random_model, save_model, ModelConfig, PlantedSpec,
    SequenceLayout, VgaRequest, Vocabulary, DEFAULT_MAX_NEW_TOKENS,
};
use vgalab::vga::{bos_profile, suggest_start_layer, GuidanceSource, Mode, VgaConfig, DEFAULT_BOS_THETA};
use vgalab::Model32;

#[derive(Parser, Debug)]
#[command(name = "vgalab", version, about = "Vision-guided attention laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a planted or random model and write its weight file.
    MakeModel(MakeModelArgs),
    /// Generate a scene set for a model's vocabulary and grid.
    MakeScenes(MakeScenesArgs),
    /// Greedy generation on one scene, optionally guided.
    Generate(GenerateArgs),
    /// Grounding of one scene as JSON plus a PGM heatmap.
    Ground(GroundArgs),
    /// Per-layer BOS attention and the suggested first guided layer.
    ProfileBos(ProfileBosArgs),
    /// Existence-question evaluation.
    EvalExist(EvalArgs),
    /// Captioning evaluation (CHAIR, AMBER, recall).
    EvalCaption(EvalCaptionArgs),
    /// Time to first token, vanilla against guided.
    BenchTtft(BenchArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModelKind {
    Planted,
    Random,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModeArg {
    Vqa,
    Caption,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum GuidanceArg {
    None,
    Even,
    Vsc,
    Vss,
    ReversedVss,
    Gt,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum NegativeArg {
    Random,
    Popular,
    Adversarial,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum GroundKind {
    Vsc,
    Vss,
    ReversedVss,
}

#[derive(Args, Debug)]
struct MakeModelArgs {
    #[arg(long, value_enum, default_value = "planted")]
    kind: ModelKind,
    /// Noise on the planted matcher; ignored for random models.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// Heads of a random model.
    #[arg(long, default_value_t = 4)]
    heads: usize,
    /// Width of a random model.
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MakeScenesArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_scenes: usize,
    #[arg(long, value_enum, default_value = "random")]
    negative: NegativeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Guidance flags shared by every run that may guide.
#[derive(Args, Debug, Clone, Default)]
struct GuidanceArgs {
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    start_layer: Option<usize>,
    /// One past the last guided layer.
    #[arg(long)]
    end_layer: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    guidance: Option<GuidanceArg>,
    #[arg(long)]
    no_head_balance: bool,
    #[arg(long)]
    no_early_term: bool,
    /// Keep the grounding fixed during captioning.
    #[arg(long)]
    no_pvg: bool,
}

#[derive(Args, Debug)]
struct SceneSel {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
    /// Index of the scene in the scene file.
    #[arg(long, default_value_t = 0)]
    scene: usize,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    sel: SceneSel,
    /// Ask whether this object is in the image; without it the prompt asks
    /// for a description.
    #[arg(long)]
    object: Option<String>,
    #[arg(long, default_value_t = DEFAULT_MAX_NEW_TOKENS)]
    max_len: usize,
    #[command(flatten)]
    guide: GuidanceArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GroundArgs {
    #[command(flatten)]
    sel: SceneSel,
    #[arg(long, value_enum, default_value = "vsc")]
    kind: GroundKind,
    /// Object words for confidence grounding; repeat to merge several.
    #[arg(long)]
    object: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    /// JSON output; the heatmap goes next to it with a `.pgm` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ProfileBosArgs {
    #[arg(long)]
    model: PathBuf,
    /// Scene file to profile on; a fresh scene from `--seed` otherwise.
    #[arg(long)]
    scenes: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    scene: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BOS_THETA)]
    theta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
    /// Recorded in the report.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads over scenes.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    guide: GuidanceArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalCaptionArgs {
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long, default_value_t = DEFAULT_MAX_NEW_TOKENS)]
    max_len: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    /// Prompts per run, one existence question per scene.
    #[arg(long, default_value_t = 100)]
    prompts: usize,
    #[command(flatten)]
    guide: GuidanceArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

impl GuidanceArgs {
    /// Resolves the flags over the defaults for `mode`. `guided_by_default`
    /// picks the mode's guidance source when `--guidance` is absent;
    /// otherwise the run is vanilla.
    fn resolve(&self, default_mode: Mode, guided_by_default: bool, n_layers: usize) -> Outcome<VgaConfig> {
        let mode = match self.mode {
            Some(ModeArg::Vqa) => Mode::Vqa,
            Some(ModeArg::Caption) => Mode::Caption,
            None => default_mode,
        };
        let mut c = match mode {
            Mode::Vqa => VgaConfig::vqa(),
            Mode::Caption => VgaConfig::caption(),
        };
        c.guidance_source = match self.guidance {
            Some(GuidanceArg::None) => GuidanceSource::None,
            Some(GuidanceArg::Even) => GuidanceSource::Even,
            Some(GuidanceArg::Vsc) => GuidanceSource::Vsc,
            Some(GuidanceArg::Vss) => GuidanceSource::Vss,
            Some(GuidanceArg::ReversedVss) => GuidanceSource::ReversedVss,
            Some(GuidanceArg::Gt) => GuidanceSource::GroundTruth,
            None if guided_by_default => c.guidance_source,
            None => GuidanceSource::None,
        };
        if let Some(b) = self.beta {
            if !(b.is_finite() && b >= 0.0) {
                return Err(usage(format!("--beta must be finite and >= 0, got {b}")));
            }
            c.beta = b;
        }
        if let Some(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(usage(format!("--lambda must lie in [0, 1], got {l}")));
            }
            c.lambda = l;
        }
        if let Some(k) = self.top_k {
            if k < 2 {
                return Err(usage(format!("--top-k must be at least 2, got {k}")));
            }
            c.top_k = k;
        }
        if let Some(s) = self.start_layer {
            c.start_layer = s;
        }
        c.end_layer = self.end_layer;
        c.head_balancing = !self.no_head_balance;
        c.early_termination = !self.no_early_term;
        c.pvg_enabled = !self.no_pvg;
        c.validate(n_layers)
            .map_err(|e| usage(format!("--start-layer/--end-layer: {e}")))?;
        Ok(c)
    }
}

fn load(path: &Path) -> Outcome<Model32> {
    Ok(load_model(path).with_context(|| format!("loading model {}", path.display()))?)
}

fn load_scenes(path: &Path, model: &Model32) -> Outcome<SceneSet> {
    let set = SceneSet::load(path).with_context(|| format!("loading scenes {}", path.display()))?;
    if set.grid != model.config().grid {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "scene grid {:?} does not match the model grid {:?}",
            set.grid,
            model.config().grid
        )));
    }
    Ok(set)
}

fn pick_scene(set: &SceneSet, index: usize) -> Outcome<&Scene> {
    set.scenes
        .get(index)
        .ok_or_else(|| usage(format!("--scene {index} out of range ({} scenes)", set.scenes.len())))
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Outcome {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn init_pool(jobs: usize) -> Outcome {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    // a second call in the same process keeps the first pool, which is fine
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    Ok(())
}

fn make_model(a: &MakeModelArgs) -> Outcome {
    let spec = PlantedSpec {
        sigma: a.sigma,
        n_layers: a.layers,
        ..PlantedSpec::default()
    };
    let model: Model32 = match a.kind {
        ModelKind::Planted => build_planted_model(&spec, a.seed)?,
        ModelKind::Random => {
            let vocab = Vocabulary::new(&spec.objects, spec.n_background)?;
            let config = ModelConfig {
                n_layers: a.layers,
                n_heads: a.heads,
                d_model: a.d_model,
                d_ff: 2 * a.d_model,
                vocab_size: vocab.len(),
                max_seq_len: 1 + spec.grid.len() + 16 + spec.max_new_tokens,
                grid: spec.grid,
            };
            random_model(config, vocab, a.seed)?
        }
    };
    save_model(&model, &a.out)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn make_scene_file(a: &MakeScenesArgs) -> Outcome {
    let model = load(&a.model)?;
    let params = SceneParams {
        n_scenes: a.n_scenes,
        grid: model.config().grid,
        negative: match a.negative {
            NegativeArg::Random => NegativeSampling::Random,
            NegativeArg::Popular => NegativeSampling::Popular,
            NegativeArg::Adversarial => NegativeSampling::Adversarial,
        },
        ..SceneParams::default()
    };
    let set = make_scenes(&params, model.vocab(), a.seed).map_err(|e| usage(e.to_string()))?;
    set.save(&a.out)?;
    Ok(())
}

fn generate(a: &GenerateArgs) -> Outcome {
    let model = load(&a.sel.model)?;
    let set = load_scenes(&a.sel.scenes, &model)?;
    let scene = pick_scene(&set, a.sel.scene)?;
    let (layout, question, mode) = match &a.object {
        Some(word) => {
            let id = model
                .vocab()
                .id(word)
                .filter(|&id| model.vocab().is_object_word(id))
                .ok_or_else(|| usage(format!("--object `{word}` is not an object word")))?;
            let q = format!("Is there a {word} in the image?");
            (SequenceLayout::existence(model.vocab(), &scene.patches, id)?, q, Mode::Vqa)
        }
        None => (SequenceLayout::caption(&scene.patches)?, "describe".to_string(), Mode::Caption),
    };
    let config = a.guide.resolve(mode, false, model.config().n_layers)?;
    let req = (config.guidance_source != GuidanceSource::None).then(|| VgaRequest {
        config: &config,
        question: &question,
        annotation: Some(&scene.objects),
    });
    let out = greedy_generate(&model, &layout, req, a.max_len)?;
    let words: Vec<&str> = out.tokens.iter().map(|&t| model.vocab().word(t).unwrap_or("?")).collect();
    let report = json!({
        "config": config,
        "scene": a.sel.scene,
        "prompt": layout.tokens(),
        "tokens": out.tokens,
        "text": words.join(" "),
        "forward_passes": out.forward_passes,
    });
    emit(&report, a.out.as_deref())
}

fn ground(a: &GroundArgs) -> Outcome {
    if a.top_k < 2 {
        return Err(usage(format!("--top-k must be at least 2, got {}", a.top_k)));
    }
    let model = load(&a.sel.model)?;
    let set = load_scenes(&a.sel.scenes, &model)?;
    let scene = pick_scene(&set, a.sel.scene)?;
    let vl = scene_visual_logits(&model, scene)?;
    let grounding = match a.kind {
        GroundKind::Vsc => {
            if a.object.is_empty() {
                return Err(usage("--kind vsc needs at least one --object"));
            }
            let parts = a
                .object
                .iter()
                .map(|w| {
                    let id = model.vocab().id(w).ok_or_else(|| usage(format!("--object `{w}` is not in the vocabulary")))?;
                    Ok(object_grounding(&vl, id)?)
                })
                .collect::<Outcome<Vec<_>>>()?;
            merge_groundings(&parts)?
        }
        GroundKind::Vss => vss(&vl, a.top_k, VssSign::Raw)?,
        GroundKind::ReversedVss => vss(&vl, a.top_k, VssSign::Flipped)?,
    };
    let heatmap = a.out.with_extension("pgm");
    export_heatmap(&grounding.weights, set.grid, &heatmap)?;
    let report = json!({
        "kind": a.kind.to_possible_value().map(|v| v.get_name().to_string()),
        "objects": a.object,
        "top_k": a.top_k,
        "scene": a.sel.scene,
        "grid": set.grid,
        "rho": grounding.rho,
        "weights": grounding.weights,
        "heatmap": heatmap,
    });
    emit(&report, Some(&a.out))
}

fn profile_bos(a: &ProfileBosArgs) -> Outcome {
    if !(0.0..=1.0).contains(&a.theta) {
        return Err(usage(format!("--theta must lie in [0, 1], got {}", a.theta)));
    }
    let model = load(&a.model)?;
    let set = match &a.scenes {
        Some(path) => load_scenes(path, &model)?,
        None => {
            let params = SceneParams {
                n_scenes: 1,
                grid: model.config().grid,
                ..SceneParams::default()
            };
            make_scenes(&params, model.vocab(), a.seed)?
        }
    };
    let scene = pick_scene(&set, a.scene)?;
    let layout = SequenceLayout::caption(&scene.patches)?;
    let profile = bos_profile(&model, &layout)?;
    let start = suggest_start_layer(&profile, a.theta as f32);
    let report = json!({
        "n_layers": model.config().n_layers,
        "profile": profile,
        "theta": a.theta,
        "start_layer": start.layer,
        "fallback": start.fallback,
    });
    emit(&report, a.out.as_deref())
}

fn eval_exist(a: &EvalArgs) -> Outcome {
    let started = SystemTime::now();
    init_pool(a.jobs)?;
    let model = load(&a.model)?;
    let set = load_scenes(&a.scenes, &model)?;
    let config = a.guide.resolve(Mode::Vqa, true, model.config().n_layers)?;
    let existence = run_existence_eval(&model, &set, &config)?;
    let report = EvalReport {
        config,
        seed: a.seed,
        n_scenes: set.scenes.len(),
        existence: Some(existence),
        caption: None,
        dice: None,
        metadata: RunMetadata::since(started),
    };
    emit(&report, a.out.as_deref())
}

fn eval_caption(a: &EvalCaptionArgs) -> Outcome {
    let started = SystemTime::now();
    let e = &a.eval;
    init_pool(e.jobs)?;
    let model = load(&e.model)?;
    let set = load_scenes(&e.scenes, &model)?;
    let config = e.guide.resolve(Mode::Caption, true, model.config().n_layers)?;
    // AMBER folds in the F1 of the matching question-answering run
    let existence = run_existence_eval(&model, &set, &discriminative_config(&config))?;
    let caption = run_caption_eval(&model, &set, &config, a.max_len, existence.metrics.f1)?;
    let report = EvalReport {
        config,
        seed: e.seed,
        n_scenes: set.scenes.len(),
        existence: Some(existence),
        caption: Some(caption),
        dice: None,
        metadata: RunMetadata::since(started),
    };
    emit(&report, e.out.as_deref())
}

fn bench(a: &BenchArgs) -> Outcome {
    let model = load(&a.model)?;
    let set = load_scenes(&a.scenes, &model)?;
    let mut config = a.guide.resolve(Mode::Vqa, true, model.config().n_layers)?;
    if config.guidance_source == GuidanceSource::None {
        config.guidance_source = GuidanceSource::Vsc;
    }
    let prompts = set
        .scenes
        .iter()
        .filter_map(|s| s.questions.first().map(|q| (s, q)))
        .take(a.prompts)
        .map(|(s, q)| {
            let id = model.vocab().id(&q.word).context("question word outside the vocabulary")?;
            Ok(Prompt {
                layout: SequenceLayout::existence(model.vocab(), &s.patches, id)?,
                question: q.text(),
                annotation: Some(s.objects.clone()),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let stats = bench_ttft(&model, &prompts, &config, a.runs)?;
    emit(&json!({ "config": config, "stats": stats }), a.out.as_deref())
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::MakeModel(a) => make_model(a),
        Command::MakeScenes(a) => make_scene_file(a),
        Command::Generate(a) => generate(a),
        Command::Ground(a) => ground(a),
        Command::ProfileBos(a) => profile_bos(a),
        Command::EvalExist(a) => eval_exist(a),
        Command::EvalCaption(a) => eval_caption(a),
        Command::BenchTtft(a) => bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
