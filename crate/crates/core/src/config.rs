//! Run configuration: one flat document, every field optional with a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::BackendSpec;
use crate::color_match::{ColorMatchPolicy, RegionSet};
use crate::error::{Error, Result};
use crate::ingest::{DEFAULT_PALETTE_COUNT, DEFAULT_PER_BIN, DEFAULT_SEED};
use crate::metrics::SP_EPSILON;
use crate::model::{ExperimentId, PaletteAggregation, PromptSource};
use crate::prompt::PROMPT_TOKEN_BUDGET;
use crate::runner::{
    GenerationParams, DEFAULT_GUIDANCE_SCALE, DEFAULT_SCHEDULER, DEFAULT_STEPS, DEFAULT_TIMEOUT_S, GENERATION_SIZE,
};

/// Directory names under `out_dir` that a run id may not take.
pub const RESERVED_RUN_IDS: [&str; 1] = ["vlm"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_root: PathBuf,
    /// Holds `splits.json`, `palette.json`, `vlm/` and one directory per run.
    pub out_dir: PathBuf,
    pub run_id: String,
    /// Seeds the stratified split, the palette draw and the per-job generation seeds.
    pub run_seed: u64,
    pub backend: BackendSpec,
    pub palette_aggregation: PaletteAggregation,
    pub color_match_regions: RegionSet,
    pub color_match_clip: bool,
    pub token_budget: usize,
    pub workers: usize,
    pub timeout_s: u64,
    /// Empty means all experiments.
    pub experiments: Vec<ExperimentId>,
    /// Empty means all prompt sources.
    pub prompts: Vec<PromptSource>,
    pub per_bin_count: usize,
    pub palette_count: usize,
    pub steps: u32,
    pub guidance_scale: f64,
    pub scheduler: String,
    pub generation_size: u32,
    pub sp_epsilon: f64,
    /// Write each job's predicted burn mask next to its output.
    pub audit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_root: PathBuf::from("corpus"),
            out_dir: PathBuf::from("runs"),
            run_id: "default".into(),
            run_seed: DEFAULT_SEED,
            backend: BackendSpec::Stub,
            palette_aggregation: PaletteAggregation::Pooled,
            color_match_regions: RegionSet::default(),
            color_match_clip: true,
            token_budget: PROMPT_TOKEN_BUDGET,
            workers: 1,
            timeout_s: DEFAULT_TIMEOUT_S,
            experiments: Vec::new(),
            prompts: Vec::new(),
            per_bin_count: DEFAULT_PER_BIN,
            palette_count: DEFAULT_PALETTE_COUNT,
            steps: DEFAULT_STEPS,
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            scheduler: DEFAULT_SCHEDULER.into(),
            generation_size: GENERATION_SIZE,
            sp_epsilon: SP_EPSILON,
            audit: false,
        }
    }
}

#[derive(Deserialize)]
struct MetaConfig {
    config: RunConfig,
}

impl RunConfig {
    /// Reads a TOML file, or the `config` object of a run's `meta.json`.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str::<MetaConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                .config
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.run_id.is_empty()
            || self.run_id.starts_with('.')
            || self.run_id.contains(['/', '\\'])
            || RESERVED_RUN_IDS.contains(&self.run_id.as_str())
        {
            return bad(format!("invalid run id {:?}", self.run_id));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.timeout_s == 0 {
            return bad("timeout_s must be at least 1".into());
        }
        if self.token_budget == 0 {
            return bad("token_budget must be at least 1".into());
        }
        if self.steps == 0 || self.generation_size == 0 {
            return bad("steps and generation_size must be positive".into());
        }
        if !(self.guidance_scale.is_finite() && self.sp_epsilon.is_finite() && self.sp_epsilon > 0.0) {
            return bad("guidance_scale must be finite and sp_epsilon positive".into());
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }

    pub fn splits_path(&self) -> PathBuf {
        self.out_dir.join("splits.json")
    }

    pub fn palette_path(&self) -> PathBuf {
        self.out_dir.join("palette.json")
    }

    pub fn vlm_dir(&self) -> PathBuf {
        self.out_dir.join("vlm")
    }

    pub fn color_match_policy(&self) -> Result<ColorMatchPolicy> {
        ColorMatchPolicy::new(&self.color_match_regions.0, self.color_match_clip)
    }

    /// Generation parameters without the per-job seed.
    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            steps: self.steps,
            guidance_scale: self.guidance_scale,
            scheduler: self.scheduler.clone(),
            width: self.generation_size,
            height: self.generation_size,
            seed: 0,
        }
    }
}
