//! Burned/intact colour statistics estimated from real post-fire palette tiles.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ensure_dims, BurnMask, PaletteAggregation, PaletteStats, Region, RegionStats, SampleRecord, Tile};
use crate::stats::Moments;

/// Per-channel mean and population std over the pixels of `region`.
///
/// Returns [`RegionStats::undefined`] when the region is empty.
pub fn region_stats(tile: &Tile, mask: &BurnMask, region: Region) -> Result<RegionStats> {
    ensure_dims("tile", tile.dims(), mask.dims())?;
    Ok(stats_from_moments(&region_moments(tile, mask, region)))
}

pub(crate) fn region_moments(tile: &Tile, mask: &BurnMask, region: Region) -> Moments {
    let mut m = Moments::default();
    for (i, px) in tile.pixels().enumerate() {
        if mask.selects(i, region) {
            m.push(px);
        }
    }
    m
}

fn stats_from_moments(m: &Moments) -> RegionStats {
    match m.mean_std() {
        Some((mean, std)) => RegionStats::new(m.count, mean, std).expect("moments are finite"),
        None => RegionStats::undefined(),
    }
}

/// Estimates palette statistics from the after-tiles of `samples`.
///
/// `test_ids` are corpus ids of the evaluation set; overlap is rejected.
pub fn estimate_palette(
    samples: &[SampleRecord],
    aggregation: PaletteAggregation,
    test_ids: &[String],
) -> Result<PaletteStats> {
    if samples.is_empty() {
        return Err(Error::Config("palette needs at least one sample".into()));
    }
    // accumulate in corpus-id order so the float sums do not depend on input order
    let mut ordered: Vec<&SampleRecord> = samples.iter().collect();
    ordered.sort_by(|a, b| a.corpus_id.cmp(&b.corpus_id));
    let per_sample: Vec<(Moments, Moments)> = ordered
        .par_iter()
        .map(|s| {
            let after = s
                .after
                .as_deref()
                .ok_or_else(|| Error::Config("palette sample has no after tile".into()))
                .map_err(|e| e.for_sample(&s.corpus_id))?;
            Ok((
                region_moments(after, &s.mask, Region::Burned),
                region_moments(after, &s.mask, Region::Intact),
            ))
        })
        .collect::<Result<_>>()?;

    let (burned, intact) = match aggregation {
        PaletteAggregation::Pooled => {
            let mut b = Moments::default();
            let mut i = Moments::default();
            for (sb, si) in &per_sample {
                b.merge(sb);
                i.merge(si);
            }
            (stats_from_moments(&b), stats_from_moments(&i))
        }
        PaletteAggregation::PerImageMean => (
            average_of_images(per_sample.iter().map(|(b, _)| b)),
            average_of_images(per_sample.iter().map(|(_, i)| i)),
        ),
    };

    let ids: Vec<String> = ordered.iter().map(|s| s.corpus_id.clone()).collect();
    PaletteStats::new(burned, intact, ids, aggregation, test_ids)
}

/// Mean of per-image means and of per-image stds; images with an empty region are skipped.
fn average_of_images<'a>(moments: impl Iterator<Item = &'a Moments>) -> RegionStats {
    let mut images = 0u64;
    let mut pixels = 0u64;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for m in moments {
        if let Some((mu, sigma)) = m.mean_std() {
            images += 1;
            pixels += m.count;
            for c in 0..3 {
                mean[c] += mu[c];
                std[c] += sigma[c];
            }
        }
    }
    if images == 0 {
        return RegionStats::undefined();
    }
    let k = images as f64;
    RegionStats::new(pixels, mean.map(|v| v / k), std.map(|v| v / k)).expect("finite moments")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Rgb;

    fn sample(id: &str, w: u32, burned: impl Fn(u32, u32) -> bool, color: impl Fn(u32, u32) -> Rgb) -> SampleRecord {
        let mask = BurnMask::from_fn(w, w, &burned).unwrap();
        let before = Tile::filled(w, w, [0.0; 3]).unwrap();
        let after = Tile::from_fn(w, w, color).unwrap();
        SampleRecord::new(id, before, mask, Some(after)).unwrap()
    }

    #[test]
    fn two_point_moments() {
        let mask = BurnMask::new(3, 1, vec![1, 1, 0]).unwrap();
        let t = Tile::new(3, 1, vec![0.0, 0.0, 0.0, 10.0, 10.0, 10.0, 99.0, 99.0, 99.0]).unwrap();
        let s = region_stats(&t, &mask, Region::Burned).unwrap();
        assert_eq!(s.mean(), Some([5.0; 3]));
        assert_eq!(s.std(), Some([5.0; 3]));
        assert_eq!(s.pixel_count(), 2);
    }

    #[test]
    fn single_pixel_and_constant_regions() {
        let mask = BurnMask::new(2, 1, vec![1, 0]).unwrap();
        let t = Tile::new(2, 1, vec![12.0, 34.0, 56.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(region_stats(&t, &mask, Region::Burned).unwrap().std(), Some([0.0; 3]));

        let all = BurnMask::new(4, 4, vec![1; 16]).unwrap();
        let c = Tile::filled(4, 4, [7.0, 8.0, 9.0]).unwrap();
        let s = region_stats(&c, &all, Region::Burned).unwrap();
        assert_eq!(s.mean(), Some([7.0, 8.0, 9.0]));
        assert_eq!(s.std(), Some([0.0; 3]));
    }

    #[test]
    fn empty_region_is_undefined() {
        let mask = BurnMask::new(2, 1, vec![0, 0]).unwrap();
        let t = Tile::filled(2, 1, [1.0; 3]).unwrap();
        let s = region_stats(&t, &mask, Region::Burned).unwrap();
        assert!(!s.is_defined());
        assert_eq!(s.pixel_count(), 0);
    }

    #[test]
    fn one_sample_palette_equals_region_stats() {
        let s = sample(
            "a",
            6,
            |x, y| x < y,
            |x, y| [f64::from(x * 20), f64::from(y * 30), 77.0],
        );
        let pal = estimate_palette(std::slice::from_ref(&s), PaletteAggregation::Pooled, &[]).unwrap();
        let after = s.after.as_deref().unwrap();
        assert_eq!(pal.burned, region_stats(after, &s.mask, Region::Burned).unwrap());
        assert_eq!(pal.intact, region_stats(after, &s.mask, Region::Intact).unwrap());
        assert_eq!(pal.source_sample_ids, ["a"]);
    }

    #[test]
    fn pooled_mean_of_two_constant_burns() {
        let a = sample(
            "a",
            4,
            |x, _| x < 2,
            |x, _| if x < 2 { [10.0, 20.0, 30.0] } else { [100.0; 3] },
        );
        let b = sample(
            "b",
            4,
            |x, _| x >= 2,
            |x, _| if x >= 2 { [50.0, 40.0, 30.0] } else { [100.0; 3] },
        );
        let pal = estimate_palette(&[a, b], PaletteAggregation::Pooled, &[]).unwrap();
        assert_eq!(pal.burned.mean(), Some([30.0, 30.0, 30.0]));
        assert_eq!(pal.burned.std(), Some([20.0, 10.0, 0.0]));
        assert_eq!(pal.burned.pixel_count(), 16);
    }

    #[test]
    fn sample_without_burn_contributes_nothing_to_burned() {
        let a = sample("a", 4, |x, _| x < 1, |x, _| if x < 1 { [10.0; 3] } else { [100.0; 3] });
        let none = sample("z", 4, |_, _| false, |_, _| [200.0; 3]);
        let pal = estimate_palette(&[a, none], PaletteAggregation::Pooled, &[]).unwrap();
        assert_eq!(pal.burned.mean(), Some([10.0; 3]));
        assert_eq!(pal.burned.pixel_count(), 4);
    }

    #[test]
    fn per_image_mean_differs_from_pooled_with_unequal_sizes() {
        let a = sample("a", 4, |x, _| x < 1, |x, _| if x < 1 { [10.0; 3] } else { [100.0; 3] });
        let b = sample("b", 4, |x, _| x < 3, |x, _| if x < 3 { [40.0; 3] } else { [100.0; 3] });
        let pooled = estimate_palette(&[a.clone(), b.clone()], PaletteAggregation::Pooled, &[]).unwrap();
        let per = estimate_palette(&[a, b], PaletteAggregation::PerImageMean, &[]).unwrap();
        assert_eq!(per.burned.mean(), Some([25.0; 3]));
        assert_eq!(per.burned.std(), Some([0.0; 3]));
        assert_eq!(pooled.burned.mean(), Some([32.5; 3]));
        assert_eq!(per.aggregation, PaletteAggregation::PerImageMean);
    }

    #[test]
    fn rejects_missing_after_and_test_overlap() {
        let mask = BurnMask::new(2, 1, vec![1, 0]).unwrap();
        let no_after = SampleRecord::new("n", Tile::filled(2, 1, [0.0; 3]).unwrap(), mask, None).unwrap();
        assert!(estimate_palette(&[no_after], PaletteAggregation::Pooled, &[]).is_err());

        let a = sample("a", 4, |x, _| x < 2, |_, _| [1.0; 3]);
        let err = estimate_palette(&[a], PaletteAggregation::Pooled, &["a".to_string()]).unwrap_err();
        assert!(matches!(err, Error::PaletteOverlap(_)));
        assert!(estimate_palette(&[], PaletteAggregation::Pooled, &[]).is_err());
    }
}
