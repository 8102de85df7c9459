//! Serializable run reports.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vga::VgaConfig;

use super::eval::{CaptionReport, DiceReport, ExistenceReport};

/// Wall-clock facts about a run; the only part of a report that may differ
/// between identical invocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub started_unix_s: f64,
    pub elapsed_s: f64,
}

impl RunMetadata {
    pub fn since(started: SystemTime) -> Self {
        let now = SystemTime::now();
        Self {
            started_unix_s: started.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
            elapsed_s: now.duration_since(started).map_or(0.0, |d| d.as_secs_f64()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Resolved guidance configuration.
    pub config: VgaConfig,
    pub seed: u64,
    pub n_scenes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub existence: Option<ExistenceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caption: Option<CaptionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<DiceReport>,
    pub metadata: RunMetadata,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}
