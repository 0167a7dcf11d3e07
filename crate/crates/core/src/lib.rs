//! Evaluation toolkit for mask-conditioned post-wildfire image synthesis.
//!
//! The crate covers the whole batch pipeline: corpus ingestion and stratified splits,
//! palette statistics, the four burn-scar metrics, region-wise colour matching, prompt
//! construction with CLIP token budgets, the experiment runner with its file-based
//! backend contract, and report aggregation.

pub mod assets;
pub mod backend;
pub mod bpe;
pub mod color_match;
pub mod config;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod palette;
pub mod prompt;
pub mod report;
pub mod resample;
pub mod runner;
pub mod stats;
pub mod svg;
pub mod synthetic;
pub mod workflow;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use model::{
    burn_ratio, BurnMask, ExperimentId, ExperimentSetting, MetricRecord, PaletteAggregation, PaletteStats, Pipeline,
    PromptSource, Region, RegionStats, Rgb, SampleRecord, Tile,
};
