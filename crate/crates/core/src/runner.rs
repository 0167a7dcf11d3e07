//! Experiment matrix, job planning and execution against a generation backend.
//!
//! Run directory layout:
//!
//! ```text
//! <run_dir>/plan.json
//! <run_dir>/jobs/<job_id>/{manifest.json, mask.png, before.png, output.png, matched.png}
//! <run_dir>/metrics.csv
//! <run_dir>/failures.json
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::GenerationBackend;
use crate::color_match::{apply_color_matching, ColorMatchPolicy};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_sample, SP_EPSILON};
use crate::model::{
    BurnMask, ExperimentId, ExperimentSetting, MetricRecord, PaletteStats, Pipeline, PromptSource, SampleRecord, Tile,
};
use crate::prompt::{PromptBundle, PromptForge};
use crate::resample::{area_resize, bilinear_rgb8, nearest_mask};

pub const DEFAULT_STEPS: u32 = 35;
pub const DEFAULT_GUIDANCE_SCALE: f64 = 7.5;
pub const DEFAULT_SCHEDULER: &str = "UniPC";
pub const GENERATION_SIZE: u32 = 512;
pub const DEFAULT_TIMEOUT_S: u64 = 600;
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub steps: u32,
    pub guidance_scale: f64,
    pub scheduler: String,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            steps: DEFAULT_STEPS,
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            scheduler: DEFAULT_SCHEDULER.to_string(),
            width: GENERATION_SIZE,
            height: GENERATION_SIZE,
            seed: 0,
        }
    }
}

/// The document handed to a backend; field names are part of the contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobManifest {
    pub job_id: String,
    pub sample_id: String,
    pub pipeline: Pipeline,
    pub mask_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub before_path: Option<PathBuf>,
    pub prompt: String,
    pub negative_prompt: String,
    pub params: GenerationParams,
    pub output_path: PathBuf,
}

impl JobManifest {
    /// Base jobs carry no before image, Inpaint jobs must.
    pub fn validate(&self) -> Result<()> {
        match (self.pipeline, &self.before_path) {
            (Pipeline::Base, None) | (Pipeline::Inpaint, Some(_)) => Ok(()),
            (Pipeline::Base, Some(_)) => Err(Error::Config(format!(
                "{}: Base manifest must not carry before_path",
                self.job_id
            ))),
            (Pipeline::Inpaint, None) => Err(Error::Config(format!(
                "{}: Inpaint manifest requires before_path",
                self.job_id
            ))),
        }
    }

    pub fn job_dir(&self) -> &Path {
        self.output_path.parent().unwrap_or(Path::new("."))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedJob {
    pub setting: ExperimentSetting,
    pub manifest: JobManifest,
}

/// Contents of `plan.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub run_seed: u64,
    pub settings: Vec<ExperimentSetting>,
    pub samples: Vec<String>,
    pub jobs: Vec<PlannedJob>,
}

/// All valid settings in table order: E1..E4 × {P1, P2, P3}, then E5 and E6 × VLM.
pub fn enumerate_matrix() -> Vec<ExperimentSetting> {
    ExperimentId::ALL
        .iter()
        .flat_map(|&e| {
            e.prompt_sources()
                .iter()
                .map(move |&p| ExperimentSetting::for_experiment(e, p).expect("table entries are valid"))
        })
        .collect()
}

/// Keeps the settings whose experiment and prompt pass the (empty = all) filters.
pub fn filter_matrix(
    settings: &[ExperimentSetting],
    experiments: &[ExperimentId],
    prompts: &[PromptSource],
) -> Vec<ExperimentSetting> {
    settings
        .iter()
        .filter(|s| experiments.is_empty() || experiments.contains(&s.experiment_id))
        .filter(|s| prompts.is_empty() || prompts.contains(&s.prompt_source))
        .copied()
        .collect()
}

pub fn job_id(setting: &ExperimentSetting, sample_id: &str) -> String {
    format!("{}-{}-{}", setting.experiment_id, setting.prompt_source, sample_id)
}

/// First 8 bytes (big endian) of SHA-256 over `"{run_seed}:{experiment}:{prompt}:{sample}"`.
pub fn job_seed(run_seed: u64, setting: &ExperimentSetting, sample_id: &str) -> u64 {
    let key = format!(
        "{run_seed}:{}:{}:{sample_id}",
        setting.experiment_id, setting.prompt_source
    );
    let digest = Sha256::digest(key.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head)
}

/// Inputs of [`plan_run`] besides the settings and samples.
#[derive(Debug, Clone, Copy)]
pub struct PlanContext<'a> {
    pub run_dir: &'a Path,
    pub run_seed: u64,
    pub params: &'a GenerationParams,
    pub forge: &'a PromptForge,
    pub palette: &'a PaletteStats,
    /// Validated VLM prompts keyed by evaluation sample id.
    pub vlm_prompts: &'a BTreeMap<String, PromptBundle>,
}

pub fn plan_run(settings: &[ExperimentSetting], samples: &[SampleRecord], ctx: &PlanContext<'_>) -> Result<RunPlan> {
    if settings.iter().any(|s| s.prompt_source == PromptSource::Vlm) {
        let missing: Vec<String> = samples
            .iter()
            .filter(|s| !ctx.vlm_prompts.contains_key(&s.sample_id))
            .map(|s| s.sample_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingVlmResponses(missing));
        }
    }
    let mut hand_crafted = BTreeMap::new();
    for s in settings {
        if s.prompt_source != PromptSource::Vlm && !hand_crafted.contains_key(&s.prompt_source) {
            let bundle = ctx.forge.build_prompt(s.prompt_source, Some(ctx.palette))?;
            hand_crafted.insert(s.prompt_source, bundle);
        }
    }

    let jobs_dir = ctx.run_dir.join("jobs");
    let mut jobs = Vec::with_capacity(settings.len() * samples.len());
    for setting in settings {
        for sample in samples {
            let bundle = match setting.prompt_source {
                PromptSource::Vlm => &ctx.vlm_prompts[&sample.sample_id],
                p => &hand_crafted[&p],
            };
            let id = job_id(setting, &sample.sample_id);
            let dir = jobs_dir.join(&id);
            let manifest = JobManifest {
                job_id: id,
                sample_id: sample.sample_id.clone(),
                pipeline: setting.pipeline,
                mask_path: dir.join("mask.png"),
                before_path: (setting.pipeline == Pipeline::Inpaint).then(|| dir.join("before.png")),
                prompt: bundle.positive.clone(),
                negative_prompt: bundle.negative.clone(),
                params: GenerationParams {
                    seed: job_seed(ctx.run_seed, setting, &sample.sample_id),
                    ..ctx.params.clone()
                },
                output_path: dir.join("output.png"),
            };
            manifest.validate()?;
            jobs.push(PlannedJob {
                setting: *setting,
                manifest,
            });
        }
    }
    Ok(RunPlan {
        run_seed: ctx.run_seed,
        settings: settings.to_vec(),
        samples: samples.iter().map(|s| s.sample_id.clone()).collect(),
        jobs,
    })
}

#[derive(Debug, Clone)]
pub struct ExecuteOptions {
    pub workers: usize,
    pub timeout: Duration,
    pub color_match: ColorMatchPolicy,
    pub sp_epsilon: f64,
    /// Also write each job's predicted burn mask as `predicted_mask.png`.
    pub audit: bool,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        ExecuteOptions {
            workers: 1,
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_S),
            color_match: ColorMatchPolicy::default(),
            sp_epsilon: SP_EPSILON,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobFailure {
    pub job_id: String,
    pub experiment: ExperimentId,
    pub prompt: PromptSource,
    pub sample: String,
    pub reason: String,
}

/// Records and failures in plan order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<MetricRecord>,
    pub failures: Vec<JobFailure>,
}

/// Conditioning rasters at generation resolution, shared by all jobs of a sample.
struct Conditioning {
    mask: BurnMask,
    before: Tile,
}

pub fn execute(
    plan: &RunPlan,
    samples: &[SampleRecord],
    palette: &PaletteStats,
    backend: &dyn GenerationBackend,
    options: &ExecuteOptions,
) -> Result<RunOutcome> {
    let by_id: BTreeMap<&str, &SampleRecord> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let mut conditioning = BTreeMap::new();
    for id in &plan.samples {
        let sample = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Config(format!("plan references unknown sample {id}")))?;
        let size = plan
            .jobs
            .iter()
            .find(|j| &j.manifest.sample_id == id)
            .map_or((GENERATION_SIZE, GENERATION_SIZE), |j| {
                (j.manifest.params.width, j.manifest.params.height)
            });
        conditioning.insert(
            id.as_str(),
            Conditioning {
                mask: nearest_mask(&sample.mask, size.0, size.1)?,
                before: bilinear_rgb8(&sample.before, size.0, size.1)?,
            },
        );
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<std::result::Result<MetricRecord, JobFailure>> = pool.install(|| {
        plan.jobs
            .par_iter()
            .map(|job| {
                let sample = by_id[job.manifest.sample_id.as_str()];
                let cond = &conditioning[job.manifest.sample_id.as_str()];
                run_job(job, sample, cond, palette, backend, options).map_err(|e| JobFailure {
                    job_id: job.manifest.job_id.clone(),
                    experiment: job.setting.experiment_id,
                    prompt: job.setting.prompt_source,
                    sample: job.manifest.sample_id.clone(),
                    reason: e.to_string(),
                })
            })
            .collect()
    });

    let mut outcome = RunOutcome::default();
    for r in results {
        match r {
            Ok(record) => outcome.records.push(record),
            Err(failure) => outcome.failures.push(failure),
        }
    }
    Ok(outcome)
}

fn run_job(
    job: &PlannedJob,
    sample: &SampleRecord,
    cond: &Conditioning,
    palette: &PaletteStats,
    backend: &dyn GenerationBackend,
    options: &ExecuteOptions,
) -> Result<MetricRecord> {
    let m = &job.manifest;
    let dir = m.job_dir();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for stale in [&m.output_path, &dir.join("failure.json"), &dir.join("matched.png")] {
        if stale.exists() {
            fs::remove_file(stale).map_err(|e| Error::io(stale, e))?;
        }
    }
    cond.mask.save_png(&m.mask_path)?;
    if let Some(before_path) = &m.before_path {
        cond.before.save_png(before_path)?;
    }
    let manifest_path = dir.join("manifest.json");
    write_json(&manifest_path, m)?;

    backend.generate(&manifest_path, m, options.timeout)?;

    let output = Tile::load_png(&m.output_path)?;
    output.ensure_dims("generated image", m.params.width, m.params.height)?;
    let (w, h) = sample.dims();
    let mut generated = area_resize(&output, w, h)?;
    if job.setting.color_match {
        generated = apply_color_matching(&generated, &sample.mask, palette, &options.color_match)?;
        generated.save_png(&dir.join("matched.png"))?;
    }
    let eval = evaluate_sample(&generated, sample, palette, &job.setting, options.sp_epsilon)?;
    if options.audit {
        eval.predicted.mask.save_png(&dir.join("predicted_mask.png"))?;
    }
    Ok(eval.record)
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<RunLock> {
        fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let path = run_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is locked by another command (remove {} if stale)",
                run_dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::Assets;
    use crate::backend::StubBackend;
    use crate::model::{PaletteAggregation, RegionStats};

    #[test]
    fn matrix_has_fourteen_settings_in_table_order() {
        let m = enumerate_matrix();
        assert_eq!(m.len(), 14);
        let ids: Vec<String> = m
            .iter()
            .map(|s| format!("{}-{}", s.experiment_id, s.prompt_source))
            .collect();
        assert_eq!(ids[0], "E1-P1");
        assert_eq!(ids[11], "E4-P3");
        assert_eq!(ids[12], "E5-VLM");
        assert_eq!(ids[13], "E6-VLM");
        let e5 = m[12];
        assert_eq!((e5.pipeline, e5.color_match), (Pipeline::Inpaint, false));
        let e4 = m.iter().filter(|s| s.experiment_id == ExperimentId::E4);
        assert!(e4.clone().all(|s| s.pipeline == Pipeline::Base && s.color_match));
        assert_eq!(e4.count(), 3);
    }

    #[test]
    fn filter_restricts_by_experiment_and_prompt() {
        let m = enumerate_matrix();
        assert_eq!(filter_matrix(&m, &[ExperimentId::E2], &[]).len(), 3);
        assert_eq!(filter_matrix(&m, &[], &[PromptSource::Vlm]).len(), 2);
        assert_eq!(filter_matrix(&m, &[ExperimentId::E5], &[PromptSource::P1]).len(), 0);
    }

    #[test]
    fn default_params_match_generation_setup() {
        let p = GenerationParams::default();
        assert_eq!(p.steps, 35);
        assert_eq!(p.guidance_scale, 7.5);
        assert_eq!(p.scheduler, "UniPC");
        assert_eq!((p.width, p.height), (512, 512));
    }

    #[test]
    fn job_seeds_are_stable_and_distinct() {
        let m = enumerate_matrix();
        let a = job_seed(42, &m[0], "S00");
        assert_eq!(a, job_seed(42, &m[0], "S00"));
        assert_ne!(a, job_seed(43, &m[0], "S00"));
        assert_ne!(a, job_seed(42, &m[1], "S00"));
        assert_ne!(a, job_seed(42, &m[0], "S01"));
    }

    #[test]
    fn manifest_json_shape() {
        let m = JobManifest {
            job_id: "E1-P1-S00".into(),
            sample_id: "S00".into(),
            pipeline: Pipeline::Base,
            mask_path: "m.png".into(),
            before_path: None,
            prompt: "p".into(),
            negative_prompt: "n".into(),
            params: GenerationParams::default(),
            output_path: "o.png".into(),
        };
        let text = serde_json::to_string(&m).unwrap();
        let order = [
            "job_id",
            "sample_id",
            "pipeline",
            "mask_path",
            "prompt",
            "negative_prompt",
            "params",
            "output_path",
        ];
        let positions: Vec<usize> = order.iter().map(|k| text.find(&format!("\"{k}\":")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(!text.contains("before_path"));
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["pipeline"], "Base");
        assert_eq!(v["params"]["scheduler"], "UniPC");
        let inpaint = JobManifest {
            pipeline: Pipeline::Inpaint,
            ..m
        };
        assert!(inpaint.validate().is_err());
    }

    fn blob_sample(id: &str, radius: f64) -> SampleRecord {
        let mask = BurnMask::from_fn(32, 32, |x, y| {
            let (dx, dy) = (f64::from(x) - 15.5, f64::from(y) - 15.5);
            dx * dx + dy * dy < radius * radius
        })
        .unwrap();
        let before = Tile::from_fn(32, 32, |x, y| [f64::from(60 + x), f64::from(120 + y), 70.0]).unwrap();
        let after = before
            .map_pixels(|i, p| if mask.is_burned(i) { p.map(|v| v * 0.4) } else { p })
            .unwrap();
        SampleRecord::new(id, before, mask, Some(after)).unwrap()
    }

    fn palette() -> PaletteStats {
        PaletteStats {
            burned: RegionStats::new(100, [40.0, 35.0, 30.0], [10.0, 10.0, 10.0]).unwrap(),
            intact: RegionStats::new(100, [90.0, 130.0, 70.0], [15.0, 15.0, 15.0]).unwrap(),
            source_sample_ids: vec!["p0".into()],
            aggregation: PaletteAggregation::Pooled,
        }
    }

    #[test]
    fn vlm_settings_require_responses() {
        let assets = Assets::bundled();
        let forge = PromptForge::new(assets.tokenizer().clone(), assets.descriptors().clone());
        let samples = vec![blob_sample("S00", 8.0), blob_sample("S01", 10.0)];
        let pal = palette();
        let empty = BTreeMap::new();
        let params = GenerationParams::default();
        let ctx = PlanContext {
            run_dir: Path::new("runs/t"),
            run_seed: 7,
            params: &params,
            forge: &forge,
            palette: &pal,
            vlm_prompts: &empty,
        };
        let err = plan_run(&enumerate_matrix(), &samples, &ctx).unwrap_err();
        assert!(matches!(err, Error::MissingVlmResponses(ref ids) if ids == &["S00", "S01"]));

        let hand = filter_matrix(&enumerate_matrix(), &[], &PromptSource::HAND_CRAFTED);
        let plan = plan_run(&hand, &samples, &ctx).unwrap();
        assert_eq!(plan.jobs.len(), 24);
        assert_eq!(plan.jobs[0].manifest.job_id, "E1-P1-S00");
        for job in &plan.jobs {
            assert_eq!(
                job.manifest.before_path.is_some(),
                job.setting.pipeline == Pipeline::Inpaint
            );
        }
    }

    #[test]
    fn stub_run_succeeds_and_darkens_burns() {
        let dir = tempfile::tempdir().unwrap();
        let assets = Assets::bundled();
        let forge = PromptForge::new(assets.tokenizer().clone(), assets.descriptors().clone());
        let samples = vec![blob_sample("S00", 7.0), blob_sample("S01", 11.0)];
        let pal = palette();
        let empty = BTreeMap::new();
        let params = GenerationParams::default();
        let ctx = PlanContext {
            run_dir: dir.path(),
            run_seed: 7,
            params: &params,
            forge: &forge,
            palette: &pal,
            vlm_prompts: &empty,
        };
        let settings = filter_matrix(
            &enumerate_matrix(),
            &[ExperimentId::E1, ExperimentId::E2, ExperimentId::E3],
            &[PromptSource::P2],
        );
        let plan = plan_run(&settings, &samples, &ctx).unwrap();
        let out = execute(&plan, &samples, &pal, &StubBackend, &ExecuteOptions::default()).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        assert_eq!(out.records.len(), 6);
        for r in &out.records {
            assert!(r.darkness_contrast > 0.0, "{r:?}");
            if r.experiment_id == ExperimentId::E1 {
                assert_eq!(r.burn_iou, 1.0, "{r:?}");
            }
        }
        let e3_dir = dir.path().join("jobs/E3-P2-S00");
        assert!(e3_dir.join("matched.png").is_file());
        assert!(e3_dir.join("before.png").is_file());
        assert!(!dir.path().join("jobs/E1-P2-S00/before.png").exists());
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }
}
