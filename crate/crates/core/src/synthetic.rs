//! Deterministic synthetic corpus for demos and tests.
//!
//! Each sample is a vegetated before tile, a single irregular blob mask with an exact
//! burned-pixel count, and an after tile with charred pixels inside the blob.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{BurnMask, SampleRecord, Tile};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    pub size: u32,
    pub seed: u64,
    /// Burn ratios are drawn uniformly from this range.
    pub ratio_range: (f64, f64),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            count: 100,
            size: 224,
            seed: 0,
            ratio_range: (0.0, 1.0),
        }
    }
}

/// A blob of exactly `burned` pixels: pixels ranked by a wobbly radial distance from
/// `center`, ties broken by raster index.
pub fn blob_mask(size: u32, burned: usize, center: (f64, f64), wobble: [f64; 4]) -> Result<BurnMask> {
    let n = (size * size) as usize;
    let burned = burned.min(n);
    let mut order: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let x = (i % size as usize) as f64 + 0.5 - center.0;
            let y = (i / size as usize) as f64 + 0.5 - center.1;
            let theta = y.atan2(x);
            let shape = 1.0 + wobble[0] * (2.0 * theta + wobble[1]).sin() + wobble[2] * (3.0 * theta + wobble[3]).sin();
            ((x * x + y * y).sqrt() / shape, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut data = vec![0u8; n];
    for &(_, i) in &order[..burned] {
        data[i] = 1;
    }
    BurnMask::new(size, size, data)
}

fn clamp_channel(v: f64) -> f64 {
    v.round().clamp(0.0, 255.0)
}

/// Builds one sample; pixel values are integers so PNG round trips are exact.
pub fn synthetic_sample(id: &str, size: u32, ratio: f64, rng: &mut ChaCha8Rng) -> Result<SampleRecord> {
    let n = (size * size) as usize;
    let burned = (ratio * n as f64).round() as usize;
    let s = f64::from(size);
    let center = (s * rng.random_range(0.3..0.7), s * rng.random_range(0.3..0.7));
    let wobble = [
        rng.random_range(0.0..0.2),
        rng.random_range(0.0..TAU),
        rng.random_range(0.0..0.15),
        rng.random_range(0.0..TAU),
    ];
    let mask = blob_mask(size, burned, center, wobble)?;

    let veg = [
        rng.random_range(50.0..80.0),
        rng.random_range(95.0..130.0),
        rng.random_range(40.0..65.0),
    ];
    let char_ = [
        rng.random_range(35.0..60.0),
        rng.random_range(28.0..45.0),
        rng.random_range(22.0..38.0),
    ];
    let phase = rng.random_range(0.0..TAU);
    let noise: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-8.0..8.0)).collect();
    let texture = |x: u32, y: u32| 10.0 * ((f64::from(x) * 0.21 + phase).sin() * (f64::from(y) * 0.17).cos());

    let before = Tile::from_fn(size, size, |x, y| {
        let i = (y * size + x) as usize * 3;
        let t = texture(x, y);
        [0, 1, 2].map(|c| clamp_channel(veg[c] + t + noise[i + c]))
    })?;
    let after = Tile::from_fn(size, size, |x, y| {
        let i = (y * size + x) as usize;
        let t = texture(x, y);
        if mask.is_burned(i) {
            [0, 1, 2].map(|c| clamp_channel(char_[c] + 0.4 * t + 0.6 * noise[i * 3 + c]))
        } else {
            [0, 1, 2].map(|c| clamp_channel(veg[c] * 0.95 + t + noise[i * 3 + (2 - c)]))
        }
    })?;
    SampleRecord::new(id, before, mask, Some(after))
}

/// In-memory corpus with ids `tile_000`, `tile_001`, …
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SampleRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.ratio_range;
    (0..spec.count)
        .map(|k| {
            let ratio = if hi > lo { rng.random_range(lo..hi) } else { lo };
            synthetic_sample(&format!("tile_{k:03}"), spec.size, ratio, &mut rng)
        })
        .collect()
}

/// Writes the corpus in the `<root>/<id>/{before,mask,after}.png` layout.
pub fn write_corpus(root: &Path, samples: &[SampleRecord]) -> Result<()> {
    for s in samples {
        let dir = root.join(&s.corpus_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        s.before.save_png(&dir.join("before.png"))?;
        s.mask.save_png(&dir.join("mask.png"))?;
        if let Some(after) = &s.after {
            after.save_png(&dir.join("after.png"))?;
        }
    }
    Ok(())
}
