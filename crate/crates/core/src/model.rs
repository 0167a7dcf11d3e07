//! Shared data types: rasters, region statistics, samples, and the experiment matrix vocabulary.
//!
//! Channel values are kept on the 0–255 scale as `f64`. All types are immutable after
//! construction; samples hold their rasters behind `Arc` so workers can share them.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An RGB triple in channel-value units.
pub type Rgb = [f64; 3];

pub const CHANNEL_MAX: f64 = 255.0;

/// Mask source pixels at or above this 8-bit value are burned.
pub const MASK_THRESHOLD: u8 = 128;

/// An RGB raster with values in `[0, 255]`, interleaved row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Tile {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!("empty tile {width}x{height}")));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::InvalidRaster(format!(
                "tile {width}x{height} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=CHANNEL_MAX).contains(*v)) {
            return Err(Error::InvalidRaster(format!("channel value {v} outside [0, 255]")));
        }
        Ok(Tile { width, height, data })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Tile::new(width, height, data)
    }

    pub fn filled(width: u32, height: u32, rgb: Rgb) -> Result<Self> {
        Tile::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, index: usize) -> Rgb {
        let i = index * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = Rgb> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Rebuilds the tile pixel by pixel, keeping dimensions.
    pub fn map_pixels(&self, mut f: impl FnMut(usize, Rgb) -> Rgb) -> Result<Tile> {
        let mut data = Vec::with_capacity(self.data.len());
        for (i, px) in self.pixels().enumerate() {
            data.extend_from_slice(&f(i, px));
        }
        Tile::new(self.width, self.height, data)
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let data = img.as_raw().iter().map(|&v| f64::from(v)).collect();
        Tile::new(img.width(), img.height(), data)
    }

    /// Quantizes to 8 bits by rounding to nearest.
    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|v| v.round().clamp(0.0, CHANNEL_MAX) as u8)
            .collect();
        RgbImage::from_raw(self.width, self.height, raw).expect("buffer size matches dimensions")
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Tile::from_rgb8(&img.to_rgb8())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn ensure_dims(&self, what: &str, width: u32, height: u32) -> Result<()> {
        ensure_dims(what, (self.width, self.height), (width, height))
    }
}

pub(crate) fn ensure_dims(what: &str, actual: (u32, u32), expected: (u32, u32)) -> Result<()> {
    if actual == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected_w: expected.0,
            expected_h: expected.1,
            actual_w: actual.0,
            actual_h: actual.1,
        })
    }
}

/// A binary raster; 1 marks a burned pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BurnMask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl BurnMask {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!("empty mask {width}x{height}")));
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidRaster(format!(
                "mask {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidRaster(format!("mask value {v} is not binary")));
        }
        Ok(BurnMask { width, height, data })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(x, y)));
            }
        }
        BurnMask::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_burned(&self, index: usize) -> bool {
        self.data[index] == 1
    }

    pub fn burned_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn region_count(&self, region: Region) -> usize {
        match region {
            Region::Burned => self.burned_count(),
            Region::Intact => self.pixel_count() - self.burned_count(),
        }
    }

    pub fn selects(&self, index: usize, region: Region) -> bool {
        self.is_burned(index) == (region == Region::Burned)
    }

    /// Binarizes an 8-bit grayscale image at [`MASK_THRESHOLD`].
    pub fn from_luma8(img: &GrayImage) -> Result<Self> {
        let data = img.as_raw().iter().map(|&v| u8::from(v >= MASK_THRESHOLD)).collect();
        BurnMask::new(img.width(), img.height(), data)
    }

    pub fn to_luma8(&self) -> GrayImage {
        let raw = self.data.iter().map(|&v| v * 255).collect();
        GrayImage::from_raw(self.width, self.height, raw).expect("buffer size matches dimensions")
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        BurnMask::from_luma8(&img.to_luma8())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_luma8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Fraction of mask pixels that are burned.
pub fn burn_ratio(mask: &BurnMask) -> f64 {
    mask.burned_count() as f64 / mask.pixel_count() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Burned,
    Intact,
}

impl Region {
    pub const BOTH: [Region; 2] = [Region::Burned, Region::Intact];
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Burned => "burned",
            Region::Intact => "intact",
        })
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "burned" => Ok(Region::Burned),
            "intact" => Ok(Region::Intact),
            other => Err(Error::Config(format!("unknown region {other:?}"))),
        }
    }
}

/// Per-channel mean and population standard deviation over one region.
///
/// An empty region has no moments; `mean()`/`std()` return `None` rather than zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionStatsRepr", into = "RegionStatsRepr")]
pub struct RegionStats {
    pixel_count: u64,
    moments: Option<(Rgb, Rgb)>,
}

impl RegionStats {
    pub fn undefined() -> Self {
        RegionStats {
            pixel_count: 0,
            moments: None,
        }
    }

    pub fn new(pixel_count: u64, mean: Rgb, std: Rgb) -> Result<Self> {
        if pixel_count == 0 {
            return Err(Error::InvalidRaster(
                "defined region statistics need at least one pixel".into(),
            ));
        }
        if std.iter().any(|s| s.is_nan() || *s < 0.0) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidRaster(format!(
                "invalid region moments mean={mean:?} std={std:?}"
            )));
        }
        Ok(RegionStats {
            pixel_count,
            moments: Some((mean, std)),
        })
    }

    pub fn pixel_count(&self) -> u64 {
        self.pixel_count
    }

    pub fn is_defined(&self) -> bool {
        self.moments.is_some()
    }

    pub fn mean(&self) -> Option<Rgb> {
        self.moments.map(|(m, _)| m)
    }

    pub fn std(&self) -> Option<Rgb> {
        self.moments.map(|(_, s)| s)
    }
}

#[derive(Serialize, Deserialize)]
struct RegionStatsRepr {
    mean: Option<Rgb>,
    std: Option<Rgb>,
    n: u64,
}

impl From<RegionStats> for RegionStatsRepr {
    fn from(s: RegionStats) -> Self {
        RegionStatsRepr {
            mean: s.mean(),
            std: s.std(),
            n: s.pixel_count,
        }
    }
}

impl TryFrom<RegionStatsRepr> for RegionStats {
    type Error = Error;

    fn try_from(r: RegionStatsRepr) -> Result<Self> {
        match (r.n, r.mean, r.std) {
            (0, None, None) => Ok(RegionStats::undefined()),
            (n, Some(mean), Some(std)) => RegionStats::new(n, mean, std),
            _ => Err(Error::InvalidRaster(
                "region statistics must have n > 0 with mean and std, or n = 0 without".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaletteAggregation {
    /// All region pixels of all palette images form one population.
    #[default]
    Pooled,
    /// Average of per-image means and per-image standard deviations.
    PerImageMean,
}

impl fmt::Display for PaletteAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PaletteAggregation::Pooled => "pooled",
            PaletteAggregation::PerImageMean => "per_image_mean",
        })
    }
}

impl FromStr for PaletteAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(PaletteAggregation::Pooled),
            "per_image_mean" => Ok(PaletteAggregation::PerImageMean),
            other => Err(Error::Config(format!(
                "unknown palette aggregation {other:?} (pooled|per_image_mean)"
            ))),
        }
    }
}

/// Dataset-level burned/intact colour statistics from the palette split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteStats {
    pub burned: RegionStats,
    pub intact: RegionStats,
    pub source_sample_ids: Vec<String>,
    pub aggregation: PaletteAggregation,
}

impl PaletteStats {
    /// Rejects palettes whose sources overlap `test_ids` or whose regions are undefined.
    pub fn new(
        burned: RegionStats,
        intact: RegionStats,
        source_sample_ids: Vec<String>,
        aggregation: PaletteAggregation,
        test_ids: &[String],
    ) -> Result<Self> {
        let palette = PaletteStats {
            burned,
            intact,
            source_sample_ids,
            aggregation,
        };
        palette.validate(test_ids)?;
        Ok(palette)
    }

    pub fn validate(&self, test_ids: &[String]) -> Result<()> {
        if !self.burned.is_defined() {
            return Err(Error::UndefinedStats(Region::Burned));
        }
        if !self.intact.is_defined() {
            return Err(Error::UndefinedStats(Region::Intact));
        }
        let test: BTreeSet<&str> = test_ids.iter().map(String::as_str).collect();
        let overlap: Vec<String> = self
            .source_sample_ids
            .iter()
            .filter(|id| test.contains(id.as_str()))
            .cloned()
            .collect();
        if overlap.is_empty() {
            Ok(())
        } else {
            Err(Error::PaletteOverlap(overlap))
        }
    }

    pub fn region(&self, region: Region) -> &RegionStats {
        match region {
            Region::Burned => &self.burned,
            Region::Intact => &self.intact,
        }
    }
}

/// One corpus sample: pre-fire tile, burn mask, and optional real post-fire tile.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    /// Evaluation id (`S00`..) once stratified; the corpus id before that.
    pub sample_id: String,
    /// Directory name in the corpus.
    pub corpus_id: String,
    pub source_dir: Option<PathBuf>,
    pub before: Arc<Tile>,
    pub mask: Arc<BurnMask>,
    pub after: Option<Arc<Tile>>,
    pub burn_ratio: f64,
}

impl SampleRecord {
    pub fn new(corpus_id: impl Into<String>, before: Tile, mask: BurnMask, after: Option<Tile>) -> Result<Self> {
        let corpus_id = corpus_id.into();
        before.ensure_dims("before tile", mask.width(), mask.height())?;
        if let Some(after) = &after {
            after.ensure_dims("after tile", mask.width(), mask.height())?;
        }
        Ok(SampleRecord {
            sample_id: corpus_id.clone(),
            corpus_id,
            source_dir: None,
            burn_ratio: burn_ratio(&mask),
            before: Arc::new(before),
            mask: Arc::new(mask),
            after: after.map(Arc::new),
        })
    }

    pub fn with_source_dir(mut self, dir: PathBuf) -> Self {
        self.source_dir = Some(dir);
        self
    }

    pub fn renamed(&self, sample_id: impl Into<String>) -> Self {
        SampleRecord {
            sample_id: sample_id.into(),
            ..self.clone()
        }
    }

    pub fn dims(&self) -> (u32, u32) {
        self.mask.dims()
    }
}

macro_rules! str_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $(t if t.eq_ignore_ascii_case($text) => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
}

str_enum!(ExperimentId { E1 => "E1", E2 => "E2", E3 => "E3", E4 => "E4", E5 => "E5", E6 => "E6" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pipeline {
    /// Whole tile generated from mask conditioning alone.
    Base,
    /// Burned region regenerated inside the pre-fire tile.
    Inpaint,
}

str_enum!(Pipeline { Base => "Base", Inpaint => "Inpaint" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptSource {
    P1,
    P2,
    P3,
    #[serde(rename = "VLM")]
    Vlm,
}

str_enum!(PromptSource { P1 => "P1", P2 => "P2", P3 => "P3", Vlm => "VLM" });

impl PromptSource {
    pub const ALL: [PromptSource; 4] = [PromptSource::P1, PromptSource::P2, PromptSource::P3, PromptSource::Vlm];
    pub const HAND_CRAFTED: [PromptSource; 3] = [PromptSource::P1, PromptSource::P2, PromptSource::P3];
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::E1,
        ExperimentId::E2,
        ExperimentId::E3,
        ExperimentId::E4,
        ExperimentId::E5,
        ExperimentId::E6,
    ];

    pub fn pipeline(self) -> Pipeline {
        match self {
            ExperimentId::E1 | ExperimentId::E4 | ExperimentId::E6 => Pipeline::Base,
            ExperimentId::E2 | ExperimentId::E3 | ExperimentId::E5 => Pipeline::Inpaint,
        }
    }

    pub fn color_match(self) -> bool {
        matches!(self, ExperimentId::E3 | ExperimentId::E4)
    }

    pub fn prompt_sources(self) -> &'static [PromptSource] {
        match self {
            ExperimentId::E5 | ExperimentId::E6 => &[PromptSource::Vlm],
            _ => &PromptSource::HAND_CRAFTED,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentId::E1 => "Mask-only, no context",
            ExperimentId::E2 => "Inpainting baseline",
            ExperimentId::E3 => "Contextual inpainting",
            ExperimentId::E4 => "Contextual mask-only",
            ExperimentId::E5 => "VLM-assisted inpainting",
            ExperimentId::E6 => "VLM-assisted mask-only",
        }
    }
}

/// One cell of the experiment × prompt matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "SettingRepr")]
pub struct ExperimentSetting {
    pub experiment_id: ExperimentId,
    pub pipeline: Pipeline,
    pub color_match: bool,
    pub prompt_source: PromptSource,
}

#[derive(Deserialize)]
struct SettingRepr {
    experiment_id: ExperimentId,
    pipeline: Pipeline,
    color_match: bool,
    prompt_source: PromptSource,
}

impl TryFrom<SettingRepr> for ExperimentSetting {
    type Error = Error;

    fn try_from(r: SettingRepr) -> Result<Self> {
        ExperimentSetting::new(r.experiment_id, r.pipeline, r.color_match, r.prompt_source)
    }
}

impl ExperimentSetting {
    /// Validates the tuple against the configuration table.
    pub fn new(
        experiment_id: ExperimentId,
        pipeline: Pipeline,
        color_match: bool,
        prompt_source: PromptSource,
    ) -> Result<Self> {
        if experiment_id.pipeline() != pipeline
            || experiment_id.color_match() != color_match
            || !experiment_id.prompt_sources().contains(&prompt_source)
        {
            return Err(Error::InvalidSetting(format!(
                "{experiment_id} is ({}, color_match={}, prompts {:?}); got ({pipeline}, color_match={color_match}, {prompt_source})",
                experiment_id.pipeline(),
                experiment_id.color_match(),
                experiment_id
                    .prompt_sources()
                    .iter()
                    .map(|p| p.as_str())
                    .collect::<Vec<_>>(),
            )));
        }
        Ok(ExperimentSetting {
            experiment_id,
            pipeline,
            color_match,
            prompt_source,
        })
    }

    pub fn for_experiment(experiment_id: ExperimentId, prompt_source: PromptSource) -> Result<Self> {
        ExperimentSetting::new(
            experiment_id,
            experiment_id.pipeline(),
            experiment_id.color_match(),
            prompt_source,
        )
    }
}

/// The four metric values for one (setting, sample) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    #[serde(rename = "experiment")]
    pub experiment_id: ExperimentId,
    #[serde(rename = "prompt")]
    pub prompt_source: PromptSource,
    #[serde(rename = "sample")]
    pub sample_id: String,
    pub burn_iou: f64,
    /// Absent when the sample has no real post-fire tile.
    pub delta_c_burn: Option<f64>,
    pub darkness_contrast: f64,
    pub spectral_plausibility: f64,
}
