//! Synthetic scenes, evaluation loops, metrics, latency benchmarking and
//! heatmap export.

pub mod bench;
pub mod eval;
pub mod heatmap;
pub mod metrics;
pub mod report;
pub mod scenes;

pub use bench::{bench_ttft, Prompt, TtftStats};
pub use eval::{
    discriminative_config, grounding_quality_eval, mentioned_objects, parse_yes_no, run_caption_eval,
    run_existence_eval, run_existence_eval_with, scene_visual_logits, CaptionReport, DiceBucket, DiceReport,
    ExistenceAnswerer, ExistenceReport, GroundingKind, ModelAnswerer,
};
pub use heatmap::{encode_pgm, export_heatmap};
pub use metrics::{amber_metrics, auc, chair_metrics, point_biserial, Amber, BinaryCounts, BinaryMetrics, Chair, ObjectSet};
pub use report::{EvalReport, RunMetadata};
pub use scenes::{make_scenes, partner, Label, NegativeSampling, Question, Scene, SceneParams, SceneSet};
