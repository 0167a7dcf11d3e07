//! Corpus loading, burn-ratio filtering, stratified test selection and the disjoint
//! palette split.
//!
//! Corpus layout: `<root>/<sample_id>/{before,mask,after}.png`, `after.png` optional.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BurnMask, SampleRecord, Tile};

pub const RATIO_MIN: f64 = 0.01;
pub const RATIO_MAX: f64 = 0.95;
pub const DEFAULT_PER_BIN: usize = 2;
pub const DEFAULT_PALETTE_COUNT: usize = 40;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct LoadFailure {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct CorpusLoad {
    pub samples: Vec<SampleRecord>,
    pub failures: Vec<LoadFailure>,
}

pub fn load_sample(dir: &Path) -> Result<SampleRecord> {
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let before_path = dir.join("before.png");
    let mask_path = dir.join("mask.png");
    for required in [&before_path, &mask_path] {
        if !required.is_file() {
            return Err(Error::Config(format!("missing {}", required.display())));
        }
    }
    let before = Tile::load_png(&before_path)?;
    let mask = BurnMask::load_png(&mask_path)?;
    let after_path = dir.join("after.png");
    let after = if after_path.is_file() {
        Some(Tile::load_png(&after_path)?)
    } else {
        None
    };
    Ok(SampleRecord::new(id, before, mask, after)?.with_source_dir(dir.to_path_buf()))
}

/// Loads every sample subdirectory of `root`, sorted by id. Broken samples are
/// reported in `failures` and left out.
pub fn load_corpus(root: &Path) -> Result<CorpusLoad> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    let results: Vec<(String, Result<SampleRecord>)> = dirs
        .par_iter()
        .map(|d| {
            let id = d.file_name().unwrap_or_default().to_string_lossy().into_owned();
            (id, load_sample(d))
        })
        .collect();
    let mut load = CorpusLoad::default();
    for (id, result) in results {
        match result {
            Ok(s) => load.samples.push(s),
            Err(e) => load.failures.push(LoadFailure {
                sample_id: id,
                reason: e.to_string(),
            }),
        }
    }
    Ok(load)
}

/// Keeps samples with `lo ≤ burn_ratio ≤ hi`, preserving order.
pub fn filter_by_ratio(samples: &[SampleRecord], lo: f64, hi: f64) -> Vec<SampleRecord> {
    assert!(
        (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo < hi,
        "ratio bounds must satisfy 0 <= lo < hi <= 1"
    );
    samples
        .iter()
        .filter(|s| (lo..=hi).contains(&s.burn_ratio))
        .cloned()
        .collect()
}

/// Half-open burn-ratio interval; the last bin is closed on the right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBin {
    pub lo: f64,
    pub hi: f64,
    pub closed: bool,
}

impl RatioBin {
    pub fn contains(&self, ratio: f64) -> bool {
        ratio >= self.lo && (ratio < self.hi || (self.closed && ratio == self.hi))
    }
}

impl fmt::Display for RatioBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let close = if self.closed { ']' } else { ')' };
        write!(f, "[{:.2}, {:.2}{close}", self.lo, self.hi)
    }
}

pub const BURN_RATIO_BINS: [RatioBin; 5] = [
    RatioBin {
        lo: 0.01,
        hi: 0.20,
        closed: false,
    },
    RatioBin {
        lo: 0.20,
        hi: 0.40,
        closed: false,
    },
    RatioBin {
        lo: 0.40,
        hi: 0.60,
        closed: false,
    },
    RatioBin {
        lo: 0.60,
        hi: 0.80,
        closed: false,
    },
    RatioBin {
        lo: 0.80,
        hi: 0.95,
        closed: true,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratificationPlan {
    pub bins: Vec<RatioBin>,
    pub per_bin_count: usize,
    pub seed: u64,
}

impl StratificationPlan {
    pub fn new(per_bin_count: usize, seed: u64) -> Self {
        StratificationPlan {
            bins: BURN_RATIO_BINS.to_vec(),
            per_bin_count,
            seed,
        }
    }

    /// Plan for a total test-set size; must be a multiple of the bin count.
    pub fn for_test_size(test_size: usize, seed: u64) -> Result<Self> {
        if test_size % BURN_RATIO_BINS.len() != 0 {
            return Err(Error::Config(format!(
                "test size {test_size} is not a multiple of {}",
                BURN_RATIO_BINS.len()
            )));
        }
        Ok(StratificationPlan::new(test_size / BURN_RATIO_BINS.len(), seed))
    }

    pub fn test_size(&self) -> usize {
        self.per_bin_count * self.bins.len()
    }

    pub fn bin_of(&self, ratio: f64) -> Option<usize> {
        self.bins.iter().position(|b| b.contains(ratio))
    }
}

fn sorted_by_id(samples: &[SampleRecord]) -> Vec<&SampleRecord> {
    let mut v: Vec<&SampleRecord> = samples.iter().collect();
    v.sort_by(|a, b| a.corpus_id.cmp(&b.corpus_id));
    v
}

/// Draws `per_bin_count` samples per bin (seeded, without replacement), then
/// renames them `S00`, `S01`, … in ascending burn-ratio order.
pub fn stratify(samples: &[SampleRecord], plan: &StratificationPlan) -> Result<Vec<SampleRecord>> {
    if plan.per_bin_count == 0 {
        return Ok(Vec::new());
    }
    let candidates = sorted_by_id(samples);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut chosen: Vec<&SampleRecord> = Vec::with_capacity(plan.test_size());
    for (k, bin) in plan.bins.iter().enumerate() {
        let members: Vec<&SampleRecord> = candidates
            .iter()
            .copied()
            .filter(|s| plan.bin_of(s.burn_ratio) == Some(k))
            .collect();
        if members.len() < plan.per_bin_count {
            return Err(Error::UnderpopulatedBin {
                bin: bin.to_string(),
                available: members.len(),
                required: plan.per_bin_count,
            });
        }
        let mut picks = rand::seq::index::sample(&mut rng, members.len(), plan.per_bin_count).into_vec();
        picks.sort_unstable();
        chosen.extend(picks.into_iter().map(|i| members[i]));
    }
    chosen.sort_by(|a, b| {
        a.burn_ratio
            .total_cmp(&b.burn_ratio)
            .then_with(|| a.corpus_id.cmp(&b.corpus_id))
    });
    let width = (chosen.len().saturating_sub(1)).to_string().len().max(2);
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.renamed(format!("S{i:0width$}")))
        .collect())
}

/// Seeded draw of `palette_count` samples with after tiles, excluding every test sample.
pub fn split_palette(
    candidates: &[SampleRecord],
    test: &[SampleRecord],
    palette_count: usize,
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    if palette_count == 0 {
        return Ok(Vec::new());
    }
    let test_ids: BTreeSet<&str> = test.iter().map(|s| s.corpus_id.as_str()).collect();
    let eligible: Vec<&SampleRecord> = sorted_by_id(candidates)
        .into_iter()
        .filter(|s| s.after.is_some() && !test_ids.contains(s.corpus_id.as_str()))
        .collect();
    if eligible.len() < palette_count {
        return Err(Error::InsufficientPalette {
            available: eligible.len(),
            required: palette_count,
        });
    }
    // separate stream from the test draw
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut picks = rand::seq::index::sample(&mut rng, eligible.len(), palette_count).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|i| eligible[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestAssignment {
    pub id: String,
    pub corpus_id: String,
    pub burn_ratio: f64,
    pub bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub candidates: usize,
    pub selected: Vec<String>,
}

/// Contents of `splits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub seed: u64,
    pub ratio_filter: [f64; 2],
    pub per_bin_count: usize,
    pub ordering: String,
    pub bins: Vec<BinReport>,
    pub test: Vec<TestAssignment>,
    pub palette_ids: Vec<String>,
}

impl Splits {
    pub fn build(
        plan: &StratificationPlan,
        candidates: &[SampleRecord],
        test: &[SampleRecord],
        palette: &[SampleRecord],
    ) -> Self {
        let bins = plan
            .bins
            .iter()
            .enumerate()
            .map(|(k, b)| BinReport {
                label: b.to_string(),
                lo: b.lo,
                hi: b.hi,
                candidates: candidates
                    .iter()
                    .filter(|s| plan.bin_of(s.burn_ratio) == Some(k))
                    .count(),
                selected: test
                    .iter()
                    .filter(|s| plan.bin_of(s.burn_ratio) == Some(k))
                    .map(|s| s.corpus_id.clone())
                    .collect(),
            })
            .collect();
        Splits {
            seed: plan.seed,
            ratio_filter: [RATIO_MIN, RATIO_MAX],
            per_bin_count: plan.per_bin_count,
            ordering: "ascending burn ratio".into(),
            bins,
            test: test
                .iter()
                .map(|s| TestAssignment {
                    id: s.sample_id.clone(),
                    corpus_id: s.corpus_id.clone(),
                    burn_ratio: s.burn_ratio,
                    bin: plan.bin_of(s.burn_ratio).expect("test samples are binned"),
                })
                .collect(),
            palette_ids: palette.iter().map(|s| s.corpus_id.clone()).collect(),
        }
    }

    pub fn test_corpus_ids(&self) -> Vec<String> {
        self.test.iter().map(|t| t.corpus_id.clone()).collect()
    }

    /// Resolves test assignments against a loaded corpus, renaming to evaluation ids.
    pub fn resolve_test(&self, corpus: &[SampleRecord]) -> Result<Vec<SampleRecord>> {
        self.test
            .iter()
            .map(|t| {
                corpus
                    .iter()
                    .find(|s| s.corpus_id == t.corpus_id)
                    .map(|s| s.renamed(t.id.clone()))
                    .ok_or_else(|| Error::Config(format!("test sample {} not in corpus", t.corpus_id)))
            })
            .collect()
    }

    pub fn resolve_palette(&self, corpus: &[SampleRecord]) -> Result<Vec<SampleRecord>> {
        self.palette_ids
            .iter()
            .map(|id| {
                corpus
                    .iter()
                    .find(|s| &s.corpus_id == id)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("palette sample {id} not in corpus")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A 20×20 sample whose first `burned` pixels are burned.
    pub(crate) fn sample_with_ratio(id: &str, ratio: f64) -> SampleRecord {
        let n = 400usize;
        let burned = (ratio * n as f64).round() as usize;
        let mask = BurnMask::new(20, 20, (0..n).map(|i| u8::from(i < burned)).collect()).unwrap();
        let t = Tile::filled(20, 20, [90.0, 120.0, 60.0]).unwrap();
        SampleRecord::new(id, t.clone(), mask, Some(t)).unwrap()
    }

    fn with_ratios(ratios: &[f64]) -> Vec<SampleRecord> {
        ratios
            .iter()
            .enumerate()
            .map(|(i, &r)| sample_with_ratio(&format!("c{i:03}"), r))
            .collect()
    }

    #[test]
    fn filter_keeps_bounds_inclusive() {
        let s = with_ratios(&[0.005, 0.05, 0.96]);
        let kept = filter_by_ratio(&s, RATIO_MIN, RATIO_MAX);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].burn_ratio, 0.05);
        assert_eq!(filter_by_ratio(&s, 0.0, 1.0).len(), 3);
        assert!(filter_by_ratio(&[], 0.0, 1.0).is_empty());
    }

    #[test]
    #[should_panic]
    fn filter_rejects_inverted_bounds() {
        filter_by_ratio(&[], 0.5, 0.5);
    }

    #[test]
    fn bins_cover_expected_edges() {
        let plan = StratificationPlan::new(2, 1);
        assert_eq!(plan.bin_of(0.005), None);
        assert_eq!(plan.bin_of(0.01), Some(0));
        assert_eq!(plan.bin_of(0.2), Some(1));
        assert_eq!(plan.bin_of(0.95), Some(4));
        assert_eq!(plan.bin_of(0.96), None);
        assert_eq!(StratificationPlan::for_test_size(10, 1).unwrap().per_bin_count, 2);
        assert!(StratificationPlan::for_test_size(11, 1).is_err());
    }

    #[test]
    fn stratify_two_per_bin() {
        let s = with_ratios(&[0.05, 0.10, 0.25, 0.30, 0.50, 0.55, 0.70, 0.75, 0.90, 0.92, 0.15, 0.35]);
        let plan = StratificationPlan::new(2, 42);
        let test = stratify(&s, &plan).unwrap();
        assert_eq!(test.len(), 10);
        let mut per_bin = [0; 5];
        for t in &test {
            per_bin[plan.bin_of(t.burn_ratio).unwrap()] += 1;
        }
        assert_eq!(per_bin, [2; 5]);
        let ids: Vec<&str> = test.iter().map(|t| t.sample_id.as_str()).collect();
        assert_eq!(
            ids,
            ["S00", "S01", "S02", "S03", "S04", "S05", "S06", "S07", "S08", "S09"]
        );
        assert!(test.windows(2).all(|w| w[0].burn_ratio <= w[1].burn_ratio));
        assert_eq!(
            stratify(&s, &plan)
                .unwrap()
                .iter()
                .map(|t| &t.corpus_id)
                .collect::<Vec<_>>(),
            test.iter().map(|t| &t.corpus_id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn stratify_zero_and_underpopulated() {
        let s = with_ratios(&[0.05, 0.10, 0.25, 0.30, 0.50, 0.55, 0.70, 0.75, 0.90]);
        assert!(stratify(&s, &StratificationPlan::new(0, 1)).unwrap().is_empty());
        match stratify(&s, &StratificationPlan::new(2, 1)) {
            Err(Error::UnderpopulatedBin {
                bin,
                available,
                required,
            }) => {
                assert_eq!(bin, "[0.80, 0.95]");
                assert_eq!((available, required), (1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn palette_split_disjoint_and_sized() {
        let ratios: Vec<f64> = (0..60).map(|i| 0.02 + 0.9 * i as f64 / 60.0).collect();
        let s = with_ratios(&ratios);
        let test = stratify(&s, &StratificationPlan::new(2, 7)).unwrap();
        let pal = split_palette(&s, &test, 40, 7).unwrap();
        assert_eq!(pal.len(), 40);
        let test_ids: BTreeSet<_> = test.iter().map(|t| &t.corpus_id).collect();
        assert!(pal.iter().all(|p| !test_ids.contains(&p.corpus_id)));
        assert!(split_palette(&s, &test, 0, 7).unwrap().is_empty());

        let small = with_ratios(&(0..45).map(|i| 0.02 + 0.9 * i as f64 / 45.0).collect::<Vec<_>>());
        let test = stratify(&small, &StratificationPlan::new(2, 7)).unwrap();
        assert!(matches!(
            split_palette(&small, &test, 40, 7),
            Err(Error::InsufficientPalette {
                available: 35,
                required: 40
            })
        ));
    }

    #[test]
    fn load_corpus_reports_missing_and_mismatched() {
        let root = tempfile::tempdir().unwrap();
        let mk = |name: &str, mask_dims: (u32, u32), with_mask: bool| {
            let d = root.path().join(name);
            std::fs::create_dir_all(&d).unwrap();
            Tile::filled(8, 8, [10.0, 20.0, 30.0])
                .unwrap()
                .save_png(&d.join("before.png"))
                .unwrap();
            if with_mask {
                BurnMask::from_fn(mask_dims.0, mask_dims.1, |x, _| x < 2)
                    .unwrap()
                    .save_png(&d.join("mask.png"))
                    .unwrap();
            }
        };
        mk("b", (8, 8), true);
        mk("a", (8, 8), true);
        mk("c", (8, 8), true);
        mk("d_nomask", (8, 8), false);
        mk("e_big", (16, 16), true);
        let load = load_corpus(root.path()).unwrap();
        let ids: Vec<&str> = load.samples.iter().map(|s| s.sample_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(load.samples[0].burn_ratio, 0.25);
        assert!(load.samples[0].after.is_none());
        let failed: Vec<&str> = load.failures.iter().map(|f| f.sample_id.as_str()).collect();
        assert_eq!(failed, ["d_nomask", "e_big"]);
        assert!(load.failures[1].reason.contains("dimension mismatch"));
    }
}
