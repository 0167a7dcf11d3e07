//! Shared fixtures for the criterion benches.

use burnbench_core::palette::estimate_palette;
use burnbench_core::synthetic::{self, SyntheticSpec};
use burnbench_core::{PaletteAggregation, PaletteStats, SampleRecord};

/// A few synthetic samples at the evaluation size of 224 px.
pub fn samples(count: usize) -> Vec<SampleRecord> {
    synthetic::generate(&SyntheticSpec {
        count,
        size: 224,
        seed: 11,
        ratio_range: (0.1, 0.9),
    })
    .expect("synthetic corpus")
}

pub fn palette(samples: &[SampleRecord]) -> PaletteStats {
    estimate_palette(samples, PaletteAggregation::Pooled, &[]).expect("palette")
}

/// Realistic prompt-sized strings for tokenizer benches.
pub const PROMPTS: [&str; 3] = [
    burnbench_core::prompt::PROMPT_P1,
    burnbench_core::prompt::PROMPT_P2,
    burnbench_core::prompt::NEGATIVE_PROMPT,
];
