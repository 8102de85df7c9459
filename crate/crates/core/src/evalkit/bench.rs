//! Time-to-first-token benchmark.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::MaskAnnotation;
use crate::model::{greedy_generate, Model, SequenceLayout, VgaRequest};
use crate::numerics::Scalar;
use crate::vga::VgaConfig;

/// One benchmark prompt.
#[derive(Debug, Clone)]
pub struct Prompt {
    pub layout: SequenceLayout,
    pub question: String,
    pub annotation: Option<Vec<MaskAnnotation>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtftStats {
    pub runs: usize,
    pub prompts: usize,
    /// Mean seconds to the first token, over prompts and runs.
    pub vanilla_mean_s: f64,
    pub vga_mean_s: f64,
    /// `vga / vanilla - 1`.
    pub overhead: f64,
    /// Decoder positions processed per prompt, summed over prompts.
    pub vanilla_forward_passes: usize,
    pub vga_forward_passes: usize,
}

fn first_token<T: Scalar>(model: &Model<T>, p: &Prompt, vga: Option<&VgaConfig>) -> Result<(f64, usize)> {
    let req = vga.map(|config| VgaRequest {
        config,
        question: &p.question,
        annotation: p.annotation.as_deref(),
    });
    let start = Instant::now();
    let out = greedy_generate(model, &p.layout, req, 1)?;
    Ok((start.elapsed().as_secs_f64(), out.forward_passes))
}

/// Times vanilla and guided prefill-to-first-token on every prompt, `runs`
/// times each. Runs strictly serially; the two variants alternate so drift
/// hits both equally.
pub fn bench_ttft<T: Scalar>(model: &Model<T>, prompts: &[Prompt], config: &VgaConfig, runs: usize) -> Result<TtftStats> {
    if runs == 0 {
        return Err(Error::InvalidInput("runs must be at least 1".into()));
    }
    if prompts.is_empty() {
        return Err(Error::InvalidInput("no prompts".into()));
    }
    // warm caches and the allocator
    for p in prompts.iter().take(4) {
        first_token(model, p, None)?;
        first_token(model, p, Some(config))?;
    }
    let (mut vanilla, mut vga) = (0.0, 0.0);
    let (mut vanilla_passes, mut vga_passes) = (0, 0);
    for run in 0..runs {
        for p in prompts {
            let order = if run % 2 == 0 { [false, true] } else { [true, false] };
            for guided in order {
                let (t, passes) = first_token(model, p, guided.then_some(config))?;
                if guided {
                    vga += t;
                    if run == 0 {
                        vga_passes += passes;
                    }
                } else {
                    vanilla += t;
                    if run == 0 {
                        vanilla_passes += passes;
                    }
                }
            }
        }
    }
    let n = (runs * prompts.len()) as f64;
    let (vanilla, vga) = (vanilla / n, vga / n);
    Ok(TtftStats {
        runs,
        prompts: prompts.len(),
        vanilla_mean_s: vanilla,
        vga_mean_s: vga,
        overhead: vga / vanilla - 1.0,
        vanilla_forward_passes: vanilla_passes,
        vga_forward_passes: vga_passes,
    })
}
