//! The four burn-scar metrics, as pure functions of (generated, real, mask, palette).
//!
//! * Burn IoU: overlap between the mask and the darkest `p`-fraction of the generated
//!   tile, where `p` is the mask's burn ratio.
//! * ΔC_burn: Euclidean distance between generated and real burned-region mean RGB.
//! * Darkness contrast: intact grayscale mean minus burned grayscale mean.
//! * Spectral plausibility: fraction of channels whose burned-region mean lies within
//!   two palette standard deviations of the palette mean.
//!
//! Percentiles interpolate linearly at rank `p·(N−1)` and the predicted mask keeps
//! pixels with `G ≤ τ`, so ties at the threshold enlarge the predicted region.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    burn_ratio, ensure_dims, BurnMask, ExperimentSetting, MetricRecord, PaletteStats, Region, Rgb, SampleRecord, Tile,
};
use crate::stats::{euclidean, interpolate};

/// Default ε added to palette σ in the spectral plausibility z-score.
pub const SP_EPSILON: f64 = 1e-6;
/// z-score bound for a channel to count as plausible.
pub const SP_Z_LIMIT: f64 = 2.0;

/// Per-pixel unweighted channel mean.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayscaleField {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl GrayscaleField {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Builds a field directly from values (used for threshold tests and tooling).
    pub fn from_values(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width as usize * height as usize {
            return Err(Error::InvalidRaster(format!(
                "grayscale field {width}x{height} with {} values",
                data.len()
            )));
        }
        Ok(GrayscaleField { width, height, data })
    }
}

pub fn to_grayscale(tile: &Tile) -> GrayscaleField {
    GrayscaleField {
        width: tile.width(),
        height: tile.height(),
        data: tile.pixels().map(|[r, g, b]| (r + g + b) / 3.0).collect(),
    }
}

/// The `p`-th percentile of the field (linear interpolation at rank `p·(N−1)`).
pub fn adaptive_threshold(field: &GrayscaleField, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidPercentile(p));
    }
    let mut values = field.data.clone();
    let n = values.len();
    let rank = p * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let (_, &mut lo_value, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let hi_value = if lo + 1 < n {
        upper.iter().copied().min_by(f64::total_cmp).unwrap_or(lo_value)
    } else {
        lo_value
    };
    Ok(interpolate(lo_value, hi_value, rank - lo as f64))
}

/// Predicted burn mask (`G ≤ τ`) kept for audit output.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedBurnMask {
    pub mask: BurnMask,
    pub threshold_used: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurnIou {
    pub iou: f64,
    pub predicted: PredictedBurnMask,
}

pub fn burn_iou(generated: &Tile, mask: &BurnMask) -> Result<BurnIou> {
    ensure_dims("generated tile", generated.dims(), mask.dims())?;
    let p = burn_ratio(mask);
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::DegenerateMask { ratio: p });
    }
    let gray = to_grayscale(generated);
    let tau = adaptive_threshold(&gray, p)?;
    let predicted: Vec<u8> = gray.data.iter().map(|&g| u8::from(g <= tau)).collect();
    let (mut inter, mut union) = (0usize, 0usize);
    for (&pred, &truth) in predicted.iter().zip(mask.data()) {
        inter += usize::from(pred == 1 && truth == 1);
        union += usize::from(pred == 1 || truth == 1);
    }
    Ok(BurnIou {
        // union ≥ burned count > 0
        iou: inter as f64 / union as f64,
        predicted: PredictedBurnMask {
            mask: BurnMask::new(mask.width(), mask.height(), predicted)?,
            threshold_used: tau,
        },
    })
}

/// Mean RGB over the pixels of `region`; `None` when the region is empty.
pub fn region_mean(tile: &Tile, mask: &BurnMask, region: Region) -> Option<Rgb> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for (i, px) in tile.pixels().enumerate() {
        if mask.selects(i, region) {
            n += 1;
            for c in 0..3 {
                sum[c] += px[c];
            }
        }
    }
    (n > 0).then(|| sum.map(|s| s / n as f64))
}

fn region_gray_mean(gray: &GrayscaleField, mask: &BurnMask, region: Region) -> Result<f64> {
    let (sum, n) = gray
        .data
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.selects(*i, region))
        .fold((0.0, 0usize), |(s, n), (_, g)| (s + g, n + 1));
    if n == 0 {
        Err(Error::EmptyRegion(region))
    } else {
        Ok(sum / n as f64)
    }
}

pub fn delta_c_burn(generated: &Tile, real: &Tile, mask: &BurnMask) -> Result<f64> {
    ensure_dims("generated tile", generated.dims(), mask.dims())?;
    ensure_dims("real tile", real.dims(), mask.dims())?;
    let g = region_mean(generated, mask, Region::Burned).ok_or(Error::EmptyRegion(Region::Burned))?;
    let r = region_mean(real, mask, Region::Burned).ok_or(Error::EmptyRegion(Region::Burned))?;
    Ok(euclidean(g, r))
}

pub fn darkness_contrast(generated: &Tile, mask: &BurnMask) -> Result<f64> {
    ensure_dims("generated tile", generated.dims(), mask.dims())?;
    let gray = to_grayscale(generated);
    let burned = region_gray_mean(&gray, mask, Region::Burned)?;
    let intact = region_gray_mean(&gray, mask, Region::Intact)?;
    Ok(intact - burned)
}

/// Per-channel z-scores of the generated burned mean against the palette.
pub fn palette_z_scores(generated: &Tile, mask: &BurnMask, palette: &PaletteStats, epsilon: f64) -> Result<Rgb> {
    ensure_dims("generated tile", generated.dims(), mask.dims())?;
    let (p_mean, p_std) = palette
        .burned
        .mean()
        .zip(palette.burned.std())
        .ok_or(Error::UndefinedStats(Region::Burned))?;
    let g = region_mean(generated, mask, Region::Burned).ok_or(Error::EmptyRegion(Region::Burned))?;
    Ok(std::array::from_fn(|c| (g[c] - p_mean[c]).abs() / (p_std[c] + epsilon)))
}

pub fn spectral_plausibility(generated: &Tile, mask: &BurnMask, palette: &PaletteStats, epsilon: f64) -> Result<f64> {
    let z = palette_z_scores(generated, mask, palette, epsilon)?;
    let within = z.iter().filter(|&&zc| zc <= SP_Z_LIMIT).count();
    Ok(within as f64 / 3.0)
}

/// Full metric record plus the predicted mask for optional audit output.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub record: MetricRecord,
    pub predicted: PredictedBurnMask,
}

pub fn evaluate_sample(
    generated: &Tile,
    sample: &SampleRecord,
    palette: &PaletteStats,
    setting: &ExperimentSetting,
    epsilon: f64,
) -> Result<Evaluation> {
    let inner = || -> Result<Evaluation> {
        let mask = sample.mask.as_ref();
        let iou = burn_iou(generated, mask)?;
        let delta = sample
            .after
            .as_deref()
            .map(|real| delta_c_burn(generated, real, mask))
            .transpose()?;
        Ok(Evaluation {
            record: MetricRecord {
                experiment_id: setting.experiment_id,
                prompt_source: setting.prompt_source,
                sample_id: sample.sample_id.clone(),
                burn_iou: iou.iou,
                delta_c_burn: delta,
                darkness_contrast: darkness_contrast(generated, mask)?,
                spectral_plausibility: spectral_plausibility(generated, mask, palette, epsilon)?,
            },
            predicted: iou.predicted,
        })
    };
    inner().map_err(|e| e.for_sample(&sample.sample_id))
}

/// Method knobs written into run metadata.
#[derive(Debug, Clone, Serialize)]
pub struct MetricConventions {
    pub percentile: &'static str,
    pub predicted_mask_rule: &'static str,
    pub grayscale: &'static str,
    pub std: &'static str,
    pub sp_epsilon: f64,
    pub sp_z_limit: f64,
}

impl MetricConventions {
    pub fn current(sp_epsilon: f64) -> Self {
        MetricConventions {
            percentile: "linear interpolation at rank p*(N-1)",
            predicted_mask_rule: "G <= tau",
            grayscale: "unweighted mean of R, G, B",
            std: "population",
            sp_epsilon,
            sp_z_limit: SP_Z_LIMIT,
        }
    }
}
