//! The toy visual-prefix decoder: weights, file format, forward passes with a
//! KV cache, greedy generation and model builders.

pub mod attention;
pub mod config;
pub mod forward;
pub mod generate;
pub mod io;
pub mod planted;
pub mod random;
pub mod vocab;
pub mod weights;

pub use attention::{attention_explicit, attention_fused, GuidanceRow, GuidedRows};
pub use config::{Grid, ModelConfig};
pub use forward::{
    decode_step, decode_step_with, extend, prefill, prefill_visual, prefill_with, AttentionHook,
    AttentionPath, ForwardOptions, KvCache, PrefillResult, SequenceLayout,
};
pub use generate::{greedy_generate, greedy_generate_with, Generation, VgaRequest, DEFAULT_MAX_NEW_TOKENS};
pub use io::{decode_model, encode_model, load_model, save_model};
pub use planted::{build_planted_model, PlantedGains, PlantedSpec};
pub use random::random_model;
pub use vocab::{TokenId, Vocabulary};
pub use weights::{Layer, Model};
