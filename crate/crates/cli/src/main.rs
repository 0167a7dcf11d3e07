use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use burnbench_core::assets::Assets;
use burnbench_core::backend::{BackendSpec, StubBackend};
use burnbench_core::color_match::RegionSet;
use burnbench_core::report::{format_fixed, Metric, SettingSummary};
use burnbench_core::runner::{enumerate_matrix, filter_matrix, JobManifest};
use burnbench_core::synthetic::{self, SyntheticSpec};
use burnbench_core::workflow;
use burnbench_core::{ExperimentId, PaletteAggregation, PromptSource, RunConfig};
use clap::{Args, Parser, Subcommand};

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "burnbench",
    version,
    about = "Burn-scar synthesis experiments: stratified splits, palette statistics, generation runs and metric reports"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter and stratify the corpus; write splits.json and VLM requests.
    Split,
    /// Estimate burned/intact colour statistics from the palette split.
    Palette,
    /// Plan and execute the experiment matrix, then report.
    Run,
    /// Evaluate a directory of generated images named <sample_id>.png.
    Eval {
        #[arg(long)]
        images: PathBuf,
    },
    /// Re-render report files from a run's metrics.csv.
    Report,
    /// Write a deterministic synthetic corpus to --corpus.
    Synth {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 224)]
        size: u32,
    },
    /// Print the effective configuration as TOML.
    Config,
    /// Serve one job manifest with the built-in stub generator (subprocess contract).
    StubBackend {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Flags that override the configuration file.
#[derive(Debug, Args)]
struct Overrides {
    /// Flat TOML configuration, or a run's meta.json to replay it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    run_id: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// stub | subprocess:<command with {manifest}> | http:<url>
    #[arg(long, global = true)]
    backend: Option<BackendSpec>,
    /// Comma-separated experiment ids, e.g. E1,E2.
    #[arg(long, global = true, value_delimiter = ',')]
    experiments: Option<Vec<ExperimentId>>,
    /// Comma-separated prompt sources, e.g. P1,VLM.
    #[arg(long, global = true, value_delimiter = ',')]
    prompts: Option<Vec<PromptSource>>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    timeout_s: Option<u64>,
    /// pooled | per_image_mean
    #[arg(long, global = true)]
    palette_aggregation: Option<PaletteAggregation>,
    /// Comma-separated subset of burned,intact.
    #[arg(long, global = true)]
    color_match_regions: Option<RegionSet>,
    #[arg(long, global = true)]
    token_budget: Option<usize>,
    /// Write predicted burn masks next to job outputs.
    #[arg(long, global = true)]
    audit: bool,
}

impl Overrides {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$field = v.clone(); })*
            };
        }
        set! {
            corpus => corpus_root,
            out_dir => out_dir,
            run_id => run_id,
            seed => run_seed,
            backend => backend,
            experiments => experiments,
            prompts => prompts,
            workers => workers,
            timeout_s => timeout_s,
            palette_aggregation => palette_aggregation,
            color_match_regions => color_match_regions,
            token_budget => token_budget,
        }
        if self.audit {
            c.audit = true;
        }
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<u8> {
    if let Command::StubBackend { manifest } = &cli.command {
        return cmd_stub_backend(manifest);
    }
    let config = cli.overrides.resolve()?;
    match &cli.command {
        Command::Split => cmd_split(&config),
        Command::Palette => cmd_palette(&config),
        Command::Run => cmd_run(&config),
        Command::Eval { images } => cmd_eval(&config, images),
        Command::Report => cmd_report(&config),
        Command::Synth { count, size } => cmd_synth(&config, *count, *size),
        Command::StubBackend { .. } => unreachable!("handled before configuration"),
        Command::Config => {
            print!("{}", config.to_toml());
            Ok(0)
        }
    }
}

fn cmd_split(config: &RunConfig) -> anyhow::Result<u8> {
    let out = workflow::split(config)?;
    for f in &out.load_failures {
        eprintln!("skipped corpus sample {}: {}", f.sample_id, f.reason);
    }
    for bin in &out.splits.bins {
        println!(
            "bin {:<14} candidates {:>5}  selected {}",
            bin.label,
            bin.candidates,
            bin.selected.join(" ")
        );
    }
    println!(
        "wrote {} ({} test, {} palette) and {} VLM requests",
        config.splits_path().display(),
        out.splits.test.len(),
        out.splits.palette_ids.len(),
        out.vlm_requests.len()
    );
    Ok(0)
}

fn cmd_palette(config: &RunConfig) -> anyhow::Result<u8> {
    let stats = workflow::palette(config)?;
    let fmt = |v: Option<[f64; 3]>| {
        v.map(|c| c.map(|x| format_fixed(x, 2)).join(", "))
            .unwrap_or_else(|| "-".into())
    };
    println!(
        "burned mean [{}] std [{}]",
        fmt(stats.burned.mean()),
        fmt(stats.burned.std())
    );
    println!(
        "intact mean [{}] std [{}]",
        fmt(stats.intact.mean()),
        fmt(stats.intact.std())
    );
    println!(
        "wrote {} from {} samples ({})",
        config.palette_path().display(),
        stats.source_sample_ids.len(),
        stats.aggregation
    );
    Ok(0)
}

fn print_summaries(summaries: &[SettingSummary]) {
    println!(
        "{:<4} {:<4} {:>3} {:>9} {:>9} {:>9} {:>9}",
        "exp", "prm", "n", "iou", "dC", "DC", "SP"
    );
    for s in summaries {
        let cell = |m: Metric| {
            s.metric(m)
                .map(|v| format_fixed(v.mean, m.decimals()))
                .unwrap_or_else(|| "-".into())
        };
        println!(
            "{:<4} {:<4} {:>3} {:>9} {:>9} {:>9} {:>9}",
            s.experiment_id.to_string(),
            s.prompt_source.to_string(),
            s.n,
            cell(Metric::BurnIou),
            cell(Metric::DeltaCBurn),
            cell(Metric::DarknessContrast),
            cell(Metric::SpectralPlausibility)
        );
    }
}

fn cmd_run(config: &RunConfig) -> anyhow::Result<u8> {
    let assets = Assets::from_env()?;
    let report = workflow::run(config, &assets)?;
    print_summaries(&report.summaries);
    for f in &report.failures {
        eprintln!("job {} failed: {}", f.job_id, f.reason);
    }
    println!(
        "{}: {} of {} jobs evaluated, {} failed",
        report.run_dir.display(),
        report.records.len(),
        report.jobs,
        report.failures.len()
    );
    Ok(if report.is_complete() { 0 } else { EXIT_PARTIAL })
}

fn cmd_eval(config: &RunConfig, images: &Path) -> anyhow::Result<u8> {
    let settings = filter_matrix(&enumerate_matrix(), &config.experiments, &config.prompts);
    let setting = match settings.as_slice() {
        [] => bail!("the experiment/prompt filters select no valid setting"),
        [one] => *one,
        _ if config.experiments.is_empty() && config.prompts.is_empty() => settings[0],
        _ => bail!(
            "eval labels records with one setting; narrow --experiments/--prompts (matched {})",
            settings.len()
        ),
    };
    let report = workflow::eval(config, images, setting)?;
    for s in &report.skipped {
        eprintln!("skipped {}: {}", s.sample, s.reason);
    }
    println!(
        "wrote {} ({} records as {}-{}, {} skipped)",
        report.metrics_path.display(),
        report.records.len(),
        setting.experiment_id,
        setting.prompt_source,
        report.skipped.len()
    );
    Ok(if report.records.is_empty() || !report.skipped.is_empty() {
        EXIT_PARTIAL
    } else {
        0
    })
}

fn cmd_report(config: &RunConfig) -> anyhow::Result<u8> {
    let summaries = workflow::report(config)?;
    print_summaries(&summaries);
    Ok(0)
}

fn cmd_synth(config: &RunConfig, count: usize, size: u32) -> anyhow::Result<u8> {
    let spec = SyntheticSpec {
        count,
        size,
        seed: config.run_seed,
        ..SyntheticSpec::default()
    };
    let samples = synthetic::generate(&spec)?;
    synthetic::write_corpus(&config.corpus_root, &samples)
        .with_context(|| format!("writing {}", config.corpus_root.display()))?;
    println!("wrote {count} samples to {}", config.corpus_root.display());
    Ok(0)
}

fn cmd_stub_backend(manifest_path: &Path) -> anyhow::Result<u8> {
    let text =
        std::fs::read_to_string(manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: JobManifest = serde_json::from_str(&text)?;
    manifest.validate()?;
    StubBackend::render(&manifest)?.save_png(&manifest.output_path)?;
    Ok(0)
}
