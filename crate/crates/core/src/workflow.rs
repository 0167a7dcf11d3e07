//! The command-level steps: split, palette, run, eval and report.
//!
//! Layout under `out_dir`:
//!
//! ```text
//! splits.json
//! palette.json
//! vlm/<sample_id>.request.json    written by split
//! vlm/<sample_id>.response.json   supplied by the user or an external VLM
//! <run_id>/                       one directory per run (see `runner`)
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::assets::{AssetOrigin, Assets};
use crate::color_match::SIGMA_FLOOR;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ingest::{
    filter_by_ratio, load_corpus, load_sample, split_palette, stratify, LoadFailure, RatioBin, Splits,
    StratificationPlan, RATIO_MAX, RATIO_MIN,
};
use crate::metrics::{evaluate_sample, MetricConventions};
use crate::model::{ExperimentSetting, MetricRecord, PaletteStats, PromptSource, SampleRecord, Tile};
use crate::palette::estimate_palette;
use crate::prompt::{build_vlm_request, PromptBundle, PromptForge, VLM_BODY_TOKEN_LIMIT};
use crate::report::{read_metrics_csv, report_records, write_metrics_csv, SettingSummary};
use crate::runner::{
    enumerate_matrix, execute, filter_matrix, plan_run, read_json, write_json, ExecuteOptions, GenerationParams,
    JobFailure, PlanContext, RunLock,
};

pub const SPLITS_FILE: &str = "splits.json";
pub const PALETTE_FILE: &str = "palette.json";
pub const PLAN_FILE: &str = "plan.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FAILURES_FILE: &str = "failures.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug)]
pub struct SplitOutcome {
    pub splits: Splits,
    pub load_failures: Vec<LoadFailure>,
    pub vlm_requests: Vec<PathBuf>,
}

/// Filters the corpus, draws the stratified test set and the palette split, and
/// writes `splits.json` plus one VLM request per test sample.
pub fn split(config: &RunConfig) -> Result<SplitOutcome> {
    config.validate()?;
    let _lock = RunLock::acquire(&config.out_dir)?;
    let load = load_corpus(&config.corpus_root)?;
    let candidates = filter_by_ratio(&load.samples, RATIO_MIN, RATIO_MAX);
    let plan = StratificationPlan::new(config.per_bin_count, config.run_seed);
    let test = stratify(&candidates, &plan).map_err(|e| match e {
        Error::UnderpopulatedBin { .. } => Error::Config(format!(
            "{e}; candidates per bin: {}",
            bin_diagnostics(&plan, &candidates)
        )),
        other => other,
    })?;
    let palette = split_palette(&candidates, &test, config.palette_count, config.run_seed)?;
    let splits = Splits::build(&plan, &candidates, &test, &palette);
    write_json(&config.splits_path(), &splits)?;

    let mut vlm_requests = Vec::new();
    for sample in &test {
        let path = config.vlm_dir().join(format!("{}.request.json", sample.sample_id));
        write_json(&path, &build_vlm_request(sample)?)?;
        vlm_requests.push(path);
    }
    Ok(SplitOutcome {
        splits,
        load_failures: load.failures,
        vlm_requests,
    })
}

fn bin_diagnostics(plan: &StratificationPlan, candidates: &[SampleRecord]) -> String {
    plan.bins
        .iter()
        .enumerate()
        .map(|(k, b): (usize, &RatioBin)| {
            let n = candidates
                .iter()
                .filter(|s| plan.bin_of(s.burn_ratio) == Some(k))
                .count();
            format!("{b} {n}")
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn load_splits(config: &RunConfig) -> Result<Splits> {
    let path = config.splits_path();
    if !path.is_file() {
        return Err(Error::Config(format!(
            "{} not found; run `split` first",
            path.display()
        )));
    }
    read_json(&path)
}

fn load_palette(config: &RunConfig, splits: &Splits) -> Result<PaletteStats> {
    let path = config.palette_path();
    if !path.is_file() {
        return Err(Error::Config(format!(
            "{} not found; run `palette` first",
            path.display()
        )));
    }
    let palette: PaletteStats = read_json(&path)?;
    palette.validate(&splits.test_corpus_ids())?;
    Ok(palette)
}

/// Loads the test samples named in `splits` under their evaluation ids.
pub fn load_test_samples(config: &RunConfig, splits: &Splits) -> Result<Vec<SampleRecord>> {
    splits
        .test
        .iter()
        .map(|t| {
            let sample = load_sample(&config.corpus_root.join(&t.corpus_id)).map_err(|e| e.for_sample(&t.corpus_id))?;
            if sample.burn_ratio != t.burn_ratio {
                return Err(Error::Config(format!(
                    "corpus sample {} changed since split (burn ratio {} vs {})",
                    t.corpus_id, sample.burn_ratio, t.burn_ratio
                )));
            }
            Ok(sample.renamed(t.id.clone()))
        })
        .collect()
}

/// Estimates palette statistics from the palette split and writes `palette.json`.
pub fn palette(config: &RunConfig) -> Result<PaletteStats> {
    config.validate()?;
    let _lock = RunLock::acquire(&config.out_dir)?;
    let splits = load_splits(config)?;
    let samples = splits
        .palette_ids
        .iter()
        .map(|id| load_sample(&config.corpus_root.join(id)).map_err(|e| e.for_sample(id)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = samples.iter().find(|s| s.after.is_none()) {
        return Err(Error::Config(format!(
            "palette sample {} has no after.png",
            s.corpus_id
        )));
    }
    let stats = estimate_palette(&samples, config.palette_aggregation, &splits.test_corpus_ids())?;
    write_json(&config.palette_path(), &stats)?;
    Ok(stats)
}

pub fn forge(config: &RunConfig, assets: &Assets) -> PromptForge {
    PromptForge::new(assets.tokenizer().clone(), assets.descriptors().clone()).with_budget(config.token_budget)
}

/// Validated VLM prompts for every sample that has a response file.
pub fn load_vlm_prompts(
    config: &RunConfig,
    forge: &PromptForge,
    samples: &[SampleRecord],
) -> Result<BTreeMap<String, PromptBundle>> {
    let mut out = BTreeMap::new();
    for s in samples {
        let path = config.vlm_dir().join(format!("{}.response.json", s.sample_id));
        if path.is_file() {
            let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let bundle = forge
                .validate_vlm_response(&raw)
                .map_err(|e| e.for_sample(&s.sample_id))?;
            out.insert(s.sample_id.clone(), bundle);
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct ResamplingMeta {
    pub generated_to_evaluation: &'static str,
    pub conditioning_mask: &'static str,
    pub conditioning_before: &'static str,
    pub evaluation_mask: &'static str,
}

#[derive(Debug, Serialize)]
pub struct ColorMatchMeta {
    pub method: &'static str,
    pub regions: String,
    pub clip: bool,
    pub sigma_floor: f64,
}

#[derive(Debug, Serialize)]
pub struct PromptMeta {
    pub token_budget: usize,
    pub vlm_body_token_limit: usize,
    pub tokenizer: &'static str,
    pub assets: AssetOrigin,
}

#[derive(Debug, Serialize)]
pub struct SplitMeta {
    pub seed: u64,
    pub ratio_filter: [f64; 2],
    pub per_bin_count: usize,
    pub palette_count: usize,
    pub palette_aggregation: String,
}

/// Contents of `meta.json`: the configuration plus every method convention.
#[derive(Debug, Serialize)]
pub struct RunMeta<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub generation: GenerationParams,
    pub job_seed: &'static str,
    pub resampling: ResamplingMeta,
    pub metrics: MetricConventions,
    pub color_matching: ColorMatchMeta,
    pub prompts: PromptMeta,
    pub split: SplitMeta,
    pub settings: Vec<ExperimentSetting>,
    pub samples: Vec<String>,
}

impl<'a> RunMeta<'a> {
    pub fn new(config: &'a RunConfig, assets: &Assets, settings: Vec<ExperimentSetting>, samples: Vec<String>) -> Self {
        RunMeta {
            tool: "burnbench",
            version: env!("CARGO_PKG_VERSION"),
            config,
            generation: config.generation_params(),
            job_seed: "first 8 bytes, big endian, of sha256(\"{run_seed}:{experiment}:{prompt}:{sample}\")",
            resampling: ResamplingMeta {
                generated_to_evaluation: "area average (box filter) to the sample resolution",
                conditioning_mask: "nearest neighbour to the generation size",
                conditioning_before: "bilinear on 8-bit values to the generation size",
                evaluation_mask: "original resolution, never resampled",
            },
            metrics: MetricConventions::current(config.sp_epsilon),
            color_matching: ColorMatchMeta {
                method: "per-region, per-channel mean/std affine transfer",
                regions: config.color_match_regions.to_string(),
                clip: config.color_match_clip,
                sigma_floor: SIGMA_FLOOR,
            },
            prompts: PromptMeta {
                token_budget: config.token_budget,
                vlm_body_token_limit: VLM_BODY_TOKEN_LIMIT,
                tokenizer: "CLIP byte-level BPE; whitespace collapsed and lowercased, no ftfy or HTML unescaping; sentinels excluded from counts",
                assets: assets.origin().clone(),
            },
            split: SplitMeta {
                seed: config.run_seed,
                ratio_filter: [RATIO_MIN, RATIO_MAX],
                per_bin_count: config.per_bin_count,
                palette_count: config.palette_count,
                palette_aggregation: config.palette_aggregation.to_string(),
            },
            settings,
            samples,
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub run_dir: PathBuf,
    pub jobs: usize,
    pub records: Vec<MetricRecord>,
    pub failures: Vec<JobFailure>,
    pub summaries: Vec<SettingSummary>,
}

impl RunReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && !self.records.is_empty()
    }
}

/// Plans and executes the (filtered) experiment matrix, then writes metrics, failures,
/// metadata and the report into the run directory.
pub fn run(config: &RunConfig, assets: &Assets) -> Result<RunReport> {
    config.validate()?;
    let run_dir = config.run_dir();
    let _lock = RunLock::acquire(&run_dir)?;
    let splits = load_splits(config)?;
    let palette = load_palette(config, &splits)?;
    let samples = load_test_samples(config, &splits)?;
    let settings = filter_matrix(&enumerate_matrix(), &config.experiments, &config.prompts);
    if settings.is_empty() {
        return Err(Error::Config(
            "the experiment/prompt filters select no valid setting".into(),
        ));
    }
    let forge = forge(config, assets);
    let vlm_prompts = if settings.iter().any(|s| s.prompt_source == PromptSource::Vlm) {
        load_vlm_prompts(config, &forge, &samples)?
    } else {
        BTreeMap::new()
    };
    let params = config.generation_params();
    let plan = plan_run(
        &settings,
        &samples,
        &PlanContext {
            run_dir: &run_dir,
            run_seed: config.run_seed,
            params: &params,
            forge: &forge,
            palette: &palette,
            vlm_prompts: &vlm_prompts,
        },
    )?;
    write_json(&run_dir.join(PLAN_FILE), &plan)?;
    let meta = RunMeta::new(config, assets, settings, plan.samples.clone());
    write_json(&run_dir.join(META_FILE), &meta)?;

    let backend = config.backend.build()?;
    let options = ExecuteOptions {
        workers: config.workers,
        timeout: Duration::from_secs(config.timeout_s),
        color_match: config.color_match_policy()?,
        sp_epsilon: config.sp_epsilon,
        audit: config.audit,
    };
    let outcome = execute(&plan, &samples, &palette, backend.as_ref(), &options)?;
    write_metrics_csv(&run_dir.join(METRICS_FILE), &outcome.records)?;
    write_json(&run_dir.join(FAILURES_FILE), &outcome.failures)?;
    let summaries = if outcome.records.is_empty() {
        Vec::new()
    } else {
        report_records(&run_dir, &outcome.records)?
    };
    Ok(RunReport {
        run_dir,
        jobs: plan.jobs.len(),
        records: outcome.records,
        failures: outcome.failures,
        summaries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub sample: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct EvalReport {
    pub metrics_path: PathBuf,
    pub records: Vec<MetricRecord>,
    pub skipped: Vec<Skipped>,
}

fn find_image(dir: &Path, sample: &SampleRecord) -> Option<PathBuf> {
    [&sample.sample_id, &sample.corpus_id]
        .iter()
        .map(|id| dir.join(format!("{id}.png")))
        .find(|p| p.is_file())
}

/// Evaluates externally generated images named `<sample_id>.png` (or
/// `<corpus_id>.png`) against the test samples and writes the run's `metrics.csv`.
pub fn eval(config: &RunConfig, images_dir: &Path, setting: ExperimentSetting) -> Result<EvalReport> {
    config.validate()?;
    if !images_dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", images_dir.display())));
    }
    let run_dir = config.run_dir();
    let _lock = RunLock::acquire(&run_dir)?;
    let splits = load_splits(config)?;
    let palette = load_palette(config, &splits)?;
    let samples = load_test_samples(config, &splits)?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for sample in &samples {
        let Some(path) = find_image(images_dir, sample) else {
            skipped.push(Skipped {
                sample: sample.sample_id.clone(),
                reason: "no image".into(),
            });
            continue;
        };
        let result = Tile::load_png(&path).and_then(|generated| {
            let (w, h) = sample.dims();
            generated.ensure_dims("generated image", w, h)?;
            evaluate_sample(&generated, sample, &palette, &setting, config.sp_epsilon)
        });
        match result {
            Ok(e) => records.push(e.record),
            Err(e) => skipped.push(Skipped {
                sample: sample.sample_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    let metrics_path = run_dir.join(METRICS_FILE);
    write_metrics_csv(&metrics_path, &records)?;
    Ok(EvalReport {
        metrics_path,
        records,
        skipped,
    })
}

/// Re-renders the report files from a run directory's `metrics.csv`.
pub fn report(config: &RunConfig) -> Result<Vec<SettingSummary>> {
    config.validate()?;
    let run_dir = config.run_dir();
    let _lock = RunLock::acquire(&run_dir)?;
    let path = run_dir.join(METRICS_FILE);
    if !path.is_file() {
        return Err(Error::Config(format!("{} not found", path.display())));
    }
    let records = read_metrics_csv(&path)?;
    report_records(&run_dir, &records)
}
