use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("dimension mismatch: {what} is {actual_w}x{actual_h}, expected {expected_w}x{expected_h}")]
    DimensionMismatch {
        what: String,
        expected_w: u32,
        expected_h: u32,
        actual_w: u32,
        actual_h: u32,
    },

    #[error("degenerate mask: burn ratio {ratio} leaves no burned or no intact pixels")]
    DegenerateMask { ratio: f64 },

    #[error("empty {0} region")]
    EmptyRegion(crate::model::Region),

    #[error("percentile {0} outside the open interval (0, 1)")]
    InvalidPercentile(f64),

    #[error("undefined statistics for the {0} region")]
    UndefinedStats(crate::model::Region),

    #[error("invalid experiment setting: {0}")]
    InvalidSetting(String),

    #[error("palette ids overlap the test set: {0:?}")]
    PaletteOverlap(Vec<String>),

    #[error("stratification bin {bin} has {available} candidates, {required} required")]
    UnderpopulatedBin {
        bin: String,
        available: usize,
        required: usize,
    },

    #[error("palette split needs {required} candidates outside the test set, only {available} available")]
    InsufficientPalette { available: usize, required: usize },

    #[error("sample {sample_id}: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("{source_name} uses {count} tokens, budget is {budget} ({} over)", count - budget)]
    TokenBudget {
        source_name: String,
        count: usize,
        budget: usize,
    },

    #[error("VLM response is not valid JSON: {0}")]
    VlmParse(String),

    #[error("VLM negative prompt is missing mandated phrase {0:?}")]
    MissingNegativePhrase(String),

    #[error("missing VLM responses for samples {0:?}")]
    MissingVlmResponses(Vec<String>),

    #[error("{0}")]
    Config(String),

    #[error("backend: {0}")]
    Backend(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn for_sample(self, sample_id: &str) -> Self {
        Error::Sample {
            sample_id: sample_id.to_string(),
            source: Box::new(self),
        }
    }
}
