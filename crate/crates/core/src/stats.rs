//! Small numeric helpers shared by the metrics, palette and reporting code.

use crate::model::Rgb;

/// Linear-interpolation quantile of an ascending slice at rank `q·(n−1)`.
///
/// Panics on an empty slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    interpolate(sorted[lo], sorted[hi], rank - lo as f64)
}

#[inline]
pub(crate) fn interpolate(lo: f64, hi: f64, frac: f64) -> f64 {
    lo + (hi - lo) * frac
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn euclidean(a: Rgb, b: Rgb) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Running per-channel count / sum / sum of squares. Merging is associative.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub sum: Rgb,
    pub sum_sq: Rgb,
}

impl Moments {
    pub fn push(&mut self, px: Rgb) {
        self.count += 1;
        for ((sum, sum_sq), v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(px) {
            *sum += v;
            *sum_sq += v * v;
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        for c in 0..3 {
            self.sum[c] += other.sum[c];
            self.sum_sq[c] += other.sum_sq[c];
        }
    }

    /// Mean and population standard deviation, `None` when empty.
    pub fn mean_std(&self) -> Option<(Rgb, Rgb)> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for c in 0..3 {
            mean[c] = self.sum[c] / n;
            std[c] = (self.sum_sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt();
        }
        Some((mean, std))
    }
}
