//! Region-wise mean/std colour transfer toward palette statistics.
//!
//! Each selected region is matched per channel with the affine map
//! `v' = (v − μ_src) / σ_src · σ_tgt + μ_tgt`; a region whose source σ is
//! (numerically) zero is set to `μ_tgt`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ensure_dims, BurnMask, PaletteStats, Region, RegionStats, Rgb, Tile, CHANNEL_MAX};

/// Source σ at or below this is treated as a constant channel.
pub const SIGMA_FLOOR: f64 = 1e-9;

/// Which regions get matched, and whether results are clamped to `[0, 255]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr", into = "PolicyRepr")]
pub struct ColorMatchPolicy {
    regions: Vec<Region>,
    clip: bool,
}

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    regions: Vec<Region>,
    clip: bool,
}

impl From<ColorMatchPolicy> for PolicyRepr {
    fn from(p: ColorMatchPolicy) -> Self {
        PolicyRepr {
            regions: p.regions,
            clip: p.clip,
        }
    }
}

impl TryFrom<PolicyRepr> for ColorMatchPolicy {
    type Error = Error;

    fn try_from(r: PolicyRepr) -> Result<Self> {
        ColorMatchPolicy::new(&r.regions, r.clip)
    }
}

impl Default for ColorMatchPolicy {
    fn default() -> Self {
        ColorMatchPolicy {
            regions: Region::BOTH.to_vec(),
            clip: true,
        }
    }
}

impl ColorMatchPolicy {
    pub fn new(regions: &[Region], clip: bool) -> Result<Self> {
        let mut regions = regions.to_vec();
        regions.sort();
        regions.dedup();
        if regions.is_empty() {
            return Err(Error::Config("color-match policy needs at least one region".into()));
        }
        Ok(ColorMatchPolicy { regions, clip })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn clip(&self) -> bool {
        self.clip
    }
}

/// Comma-separated region list, e.g. `burned,intact`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RegionSet(pub Vec<Region>);

impl Default for RegionSet {
    fn default() -> Self {
        RegionSet(Region::BOTH.to_vec())
    }
}

impl FromStr for RegionSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut regions = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Region>>>()?;
        regions.sort();
        regions.dedup();
        if regions.is_empty() {
            return Err(Error::Config("region set is empty".into()));
        }
        Ok(RegionSet(regions))
    }
}

impl TryFrom<String> for RegionSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RegionSet> for String {
    fn from(r: RegionSet) -> String {
        r.to_string()
    }
}

impl fmt::Display for RegionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.0.iter().map(Region::to_string).collect();
        f.write_str(&names.join(","))
    }
}

/// Pixels of `region` in raster order.
pub fn region_pixels(tile: &Tile, mask: &BurnMask, region: Region) -> Vec<Rgb> {
    tile.pixels()
        .enumerate()
        .filter(|(i, _)| mask.selects(*i, region))
        .map(|(_, px)| px)
        .collect()
}

/// Two-pass mean and population std.
pub fn pixel_moments(pixels: &[Rgb]) -> Option<(Rgb, Rgb)> {
    if pixels.is_empty() {
        return None;
    }
    let n = pixels.len() as f64;
    let mean: Rgb = std::array::from_fn(|c| pixels.iter().map(|p| p[c]).sum::<f64>() / n);
    let std = std::array::from_fn(|c| (pixels.iter().map(|p| (p[c] - mean[c]).powi(2)).sum::<f64>() / n).sqrt());
    Some((mean, std))
}

/// Unclipped affine moment transfer of a pixel population onto `target_mean`/`target_std`.
pub fn transfer_moments(pixels: &[Rgb], target_mean: Rgb, target_std: Rgb) -> Vec<Rgb> {
    let Some((mean, std)) = pixel_moments(pixels) else {
        return Vec::new();
    };
    pixels
        .iter()
        .map(|px| {
            std::array::from_fn(|c| {
                if std[c] > SIGMA_FLOOR {
                    (px[c] - mean[c]) / std[c] * target_std[c] + target_mean[c]
                } else {
                    target_mean[c]
                }
            })
        })
        .collect()
}

/// Matches one region of `tile` to `target`; other pixels are copied unchanged.
///
/// Without `clip`, a transfer that leaves `[0, 255]` is an error.
pub fn match_region(tile: &Tile, mask: &BurnMask, region: Region, target: &RegionStats, clip: bool) -> Result<Tile> {
    ensure_dims("tile", tile.dims(), mask.dims())?;
    let (t_mean, t_std) = target.mean().zip(target.std()).ok_or(Error::UndefinedStats(region))?;
    let source = region_pixels(tile, mask, region);
    if source.is_empty() {
        return Err(Error::EmptyRegion(region));
    }
    let mut matched = transfer_moments(&source, t_mean, t_std).into_iter();
    tile.map_pixels(|i, px| {
        if !mask.selects(i, region) {
            return px;
        }
        let v = matched.next().expect("one matched value per region pixel");
        if clip {
            v.map(|x| x.clamp(0.0, CHANNEL_MAX))
        } else {
            v
        }
    })
}

/// Applies [`match_region`] for each policy region against the matching palette region.
pub fn apply_color_matching(
    tile: &Tile,
    mask: &BurnMask,
    palette: &PaletteStats,
    policy: &ColorMatchPolicy,
) -> Result<Tile> {
    let mut out = tile.clone();
    for &region in policy.regions() {
        // regions are disjoint, so sequential application equals independent application
        out = match_region(&out, mask, region, palette.region(region), policy.clip())?;
    }
    Ok(out)
}
