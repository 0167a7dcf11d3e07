//! Aggregation of metric records into per-setting summaries, pooled per-experiment
//! distributions and experiment × prompt heatmaps, plus the files that carry them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExperimentId, MetricRecord, PromptSource};
use crate::runner::{enumerate_matrix, write_json};
use crate::stats::{mean, quantile_sorted};
use crate::svg;

pub const METRICS_CSV_HEADER: [&str; 7] = [
    "experiment",
    "prompt",
    "sample",
    "burn_iou",
    "delta_c_burn",
    "darkness_contrast",
    "spectral_plausibility",
];

pub const SUMMARY_CSV_HEADER: [&str; 6] = [
    "experiment",
    "prompt",
    "burn_iou",
    "delta_c_burn",
    "darkness_contrast",
    "spectral_plausibility",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BurnIou,
    DeltaCBurn,
    DarknessContrast,
    SpectralPlausibility,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::BurnIou,
        Metric::DeltaCBurn,
        Metric::DarknessContrast,
        Metric::SpectralPlausibility,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::BurnIou => "burn_iou",
            Metric::DeltaCBurn => "delta_c_burn",
            Metric::DarknessContrast => "darkness_contrast",
            Metric::SpectralPlausibility => "spectral_plausibility",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::BurnIou => "Burn IoU",
            Metric::DeltaCBurn => "ΔC burn",
            Metric::DarknessContrast => "Darkness contrast",
            Metric::SpectralPlausibility => "Spectral plausibility",
        }
    }

    /// Decimal places used in `summary.csv`.
    pub fn decimals(self) -> usize {
        match self {
            Metric::BurnIou | Metric::SpectralPlausibility => 3,
            Metric::DeltaCBurn | Metric::DarknessContrast => 2,
        }
    }

    /// True when larger values are better.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::DeltaCBurn)
    }

    pub fn value(self, r: &MetricRecord) -> Option<f64> {
        match self {
            Metric::BurnIou => Some(r.burn_iou),
            Metric::DeltaCBurn => r.delta_c_burn,
            Metric::DarknessContrast => Some(r.darkness_contrast),
            Metric::SpectralPlausibility => Some(r.spectral_plausibility),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Fixed-point formatting without a negative sign on zero.
pub fn format_fixed(value: f64, decimals: usize) -> String {
    let s = format!("{value:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl MetricSummary {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<MetricSummary> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(MetricSummary {
            n: sorted.len(),
            mean: mean(&sorted).expect("non-empty"),
            median: quantile_sorted(&sorted, 0.5),
            q1: quantile_sorted(&sorted, 0.25),
            q3: quantile_sorted(&sorted, 0.75),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    #[serde(rename = "experiment")]
    pub experiment_id: ExperimentId,
    #[serde(rename = "prompt")]
    pub prompt_source: PromptSource,
    pub n: usize,
    pub burn_iou: MetricSummary,
    /// Absent when no sample of the setting had a real post-fire tile.
    pub delta_c_burn: Option<MetricSummary>,
    pub darkness_contrast: MetricSummary,
    pub spectral_plausibility: MetricSummary,
}

impl SettingSummary {
    pub fn metric(&self, metric: Metric) -> Option<&MetricSummary> {
        match metric {
            Metric::BurnIou => Some(&self.burn_iou),
            Metric::DeltaCBurn => self.delta_c_burn.as_ref(),
            Metric::DarknessContrast => Some(&self.darkness_contrast),
            Metric::SpectralPlausibility => Some(&self.spectral_plausibility),
        }
    }
}

fn values(records: &[&MetricRecord], metric: Metric) -> Vec<f64> {
    records.iter().filter_map(|r| metric.value(r)).collect()
}

/// One summary per (experiment, prompt) present in `records`, in matrix order.
pub fn summarize(records: &[MetricRecord]) -> Vec<SettingSummary> {
    let mut groups: BTreeMap<(ExperimentId, PromptSource), Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.experiment_id, r.prompt_source)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((e, p), rs)| {
            let required = |m: Metric| MetricSummary::of(&values(&rs, m)).expect("group is non-empty");
            SettingSummary {
                experiment_id: e,
                prompt_source: p,
                n: rs.len(),
                burn_iou: required(Metric::BurnIou),
                delta_c_burn: MetricSummary::of(&values(&rs, Metric::DeltaCBurn)),
                darkness_contrast: required(Metric::DarknessContrast),
                spectral_plausibility: required(Metric::SpectralPlausibility),
            }
        })
        .collect()
}

/// Box-plot statistics with Tukey whiskers (most extreme values within 1.5·IQR of the
/// quartiles) and the sorted raw values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
    pub values: Vec<f64>,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Option<Distribution> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25);
        let q3 = quantile_sorted(&v, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = || v.iter().copied().filter(|x| (lo_fence..=hi_fence).contains(x));
        Some(Distribution {
            n: v.len(),
            min: v[0],
            q1,
            median: quantile_sorted(&v, 0.5),
            q3,
            max: v[v.len() - 1],
            mean: mean(&v).expect("non-empty"),
            whisker_low: inside().next().unwrap_or(q1),
            whisker_high: inside().next_back().unwrap_or(q3),
            outliers: v
                .iter()
                .copied()
                .filter(|x| !(lo_fence..=hi_fence).contains(x))
                .collect(),
            values: v,
        })
    }
}

/// All prompts of one experiment pooled; metrics without values are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPool {
    #[serde(rename = "experiment")]
    pub experiment_id: ExperimentId,
    pub n: usize,
    pub metrics: BTreeMap<Metric, Distribution>,
}

pub fn pooled_distributions(records: &[MetricRecord]) -> Vec<ExperimentPool> {
    ExperimentId::ALL
        .iter()
        .filter_map(|&e| {
            let rs: Vec<&MetricRecord> = records.iter().filter(|r| r.experiment_id == e).collect();
            if rs.is_empty() {
                return None;
            }
            let metrics = Metric::ALL
                .iter()
                .filter_map(|&m| Distribution::of(&values(&rs, m)).map(|d| (m, d)))
                .collect();
            Some(ExperimentPool {
                experiment_id: e,
                n: rs.len(),
                metrics,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Populated,
    /// The pair is a valid setting but no record reached the report.
    NoData,
    /// The pair is not part of the experiment matrix.
    NotInMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub value: Option<f64>,
    pub status: CellStatus,
}

/// Mean of one metric on the experiment × prompt grid (6 × 4).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMatrix {
    pub metric: Metric,
    pub rows: Vec<ExperimentId>,
    pub cols: Vec<PromptSource>,
    pub cells: Vec<Vec<HeatmapCell>>,
}

impl HeatmapMatrix {
    pub fn build(metric: Metric, summaries: &[SettingSummary]) -> HeatmapMatrix {
        let matrix = enumerate_matrix();
        let cells = ExperimentId::ALL
            .iter()
            .map(|&e| {
                PromptSource::ALL
                    .iter()
                    .map(|&p| {
                        let in_matrix = matrix.iter().any(|s| s.experiment_id == e && s.prompt_source == p);
                        let value = summaries
                            .iter()
                            .find(|s| s.experiment_id == e && s.prompt_source == p)
                            .and_then(|s| s.metric(metric))
                            .map(|m| m.mean);
                        let status = match (in_matrix, value) {
                            (false, _) => CellStatus::NotInMatrix,
                            (true, Some(_)) => CellStatus::Populated,
                            (true, None) => CellStatus::NoData,
                        };
                        HeatmapCell {
                            value: value.filter(|_| in_matrix),
                            status,
                        }
                    })
                    .collect()
            })
            .collect();
        HeatmapMatrix {
            metric,
            rows: ExperimentId::ALL.to_vec(),
            cols: PromptSource::ALL.to_vec(),
            cells,
        }
    }

    pub fn populated(&self) -> Vec<(ExperimentId, PromptSource)> {
        let mut out = Vec::new();
        for (i, row) in self.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if cell.status == CellStatus::Populated {
                    out.push((self.rows[i], self.cols[j]));
                }
            }
        }
        out
    }
}

pub fn heatmaps(summaries: &[SettingSummary]) -> Vec<HeatmapMatrix> {
    Metric::ALL
        .iter()
        .map(|&m| HeatmapMatrix::build(m, summaries))
        .collect()
}

/// Writes per-record metrics with shortest round-trip float formatting.
pub fn write_metrics_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.experiment_id.to_string(),
            r.prompt_source.to_string(),
            r.sample_id.clone(),
            r.burn_iou.to_string(),
            r.delta_c_burn.map(|v| v.to_string()).unwrap_or_default(),
            r.darkness_contrast.to_string(),
            r.spectral_plausibility.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(METRICS_CSV_HEADER) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("expected header {}", METRICS_CSV_HEADER.join(",")),
        });
    }
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

pub fn write_summary_csv(path: &Path, summaries: &[SettingSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_CSV_HEADER)?;
    for s in summaries {
        let mut row = vec![s.experiment_id.to_string(), s.prompt_source.to_string()];
        for m in Metric::ALL {
            row.push(
                s.metric(m)
                    .map(|v| format_fixed(v.mean, m.decimals()))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const POOLS_JSON: &str = "pools.json";
pub const HEATMAPS_JSON: &str = "heatmaps.json";
pub const BOXPLOTS_SVG: &str = "boxplots.svg";

/// Writes every report artifact into `out_dir`.
pub fn render(out_dir: &Path, summaries: &[SettingSummary], pools: &[ExperimentPool]) -> Result<()> {
    if summaries.is_empty() {
        return Err(Error::Config("no metric records to report".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_summary_csv(&out_dir.join(SUMMARY_CSV), summaries)?;
    write_json(&out_dir.join(SUMMARY_JSON), summaries)?;
    write_json(&out_dir.join(POOLS_JSON), pools)?;
    let maps = heatmaps(summaries);
    write_json(&out_dir.join(HEATMAPS_JSON), &maps)?;
    write_text(&out_dir.join(BOXPLOTS_SVG), &svg::boxplots(pools))?;
    for map in &maps {
        write_text(
            &out_dir.join(format!("heatmap_{}.svg", map.metric.key())),
            &svg::heatmap(map),
        )?;
    }
    Ok(())
}

/// Summarizes `records` and renders all report files.
pub fn report_records(out_dir: &Path, records: &[MetricRecord]) -> Result<Vec<SettingSummary>> {
    let summaries = summarize(records);
    render(out_dir, &summaries, &pooled_distributions(records))?;
    Ok(summaries)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
