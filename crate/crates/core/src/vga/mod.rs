//! Vision-guided attention: grounding-driven output correction, head
//! balancing, per-token grounding decay and layer gating.

pub mod balance;
pub mod bos;
pub mod config;
pub mod session;

pub use balance::{balance_from_similarity, delta_z, head_balance, HeadBalance};
pub use bos::{bos_profile, suggest_start_layer, StartLayer, DEFAULT_BOS_THETA};
pub use config::{GuidanceSource, Mode, VgaConfig};
pub use session::{guided_output, init_session, pvg_step, VgaSession};
