//! Raster resampling used around the generation backend.

use image::imageops::{self, FilterType};

use crate::error::Result;
use crate::model::{BurnMask, Tile};

/// For each destination index, the (source index, weight) pairs of an exact box filter.
fn box_weights(src: u32, dst: u32) -> Vec<Vec<(usize, f64)>> {
    let scale = f64::from(src) / f64::from(dst);
    (0..dst)
        .map(|i| {
            let start = f64::from(i) * scale;
            let end = f64::from(i + 1) * scale;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(src as usize);
            (first..last)
                .filter_map(|j| {
                    let overlap = (end.min(j as f64 + 1.0) - start.max(j as f64)).max(0.0);
                    (overlap > 0.0).then_some((j, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Area-average (box filter) resize; each output pixel is the mean of the source area
/// it covers, with fractional coverage at the edges.
pub fn area_resize(tile: &Tile, width: u32, height: u32) -> Result<Tile> {
    if tile.dims() == (width, height) {
        return Ok(tile.clone());
    }
    let (sw, sh) = tile.dims();
    let wx = box_weights(sw, width);
    let wy = box_weights(sh, height);
    let src = tile.data();

    // horizontal pass: sh rows × width
    let mut rows = vec![0.0; sh as usize * width as usize * 3];
    for y in 0..sh as usize {
        for (x, weights) in wx.iter().enumerate() {
            let out = (y * width as usize + x) * 3;
            for &(j, w) in weights {
                let i = (y * sw as usize + j) * 3;
                for c in 0..3 {
                    rows[out + c] += src[i + c] * w;
                }
            }
        }
    }
    let mut data = vec![0.0; width as usize * height as usize * 3];
    for (y, weights) in wy.iter().enumerate() {
        for x in 0..width as usize {
            let out = (y * width as usize + x) * 3;
            for &(j, w) in weights {
                let i = (j * width as usize + x) * 3;
                for c in 0..3 {
                    data[out + c] += rows[i + c] * w;
                }
            }
        }
    }
    // weights sum to 1 up to rounding; keep the range invariant
    for v in &mut data {
        *v = v.clamp(0.0, 255.0);
    }
    Tile::new(width, height, data)
}

/// Nearest-neighbour resize; keeps the mask binary.
pub fn nearest_mask(mask: &BurnMask, width: u32, height: u32) -> Result<BurnMask> {
    let img = imageops::resize(&mask.to_luma8(), width, height, FilterType::Nearest);
    BurnMask::from_luma8(&img)
}

/// Bilinear resize of an 8-bit rendering of `tile` (conditioning images only).
pub fn bilinear_rgb8(tile: &Tile, width: u32, height: u32) -> Result<Tile> {
    let img = imageops::resize(&tile.to_rgb8(), width, height, FilterType::Triangle);
    Tile::from_rgb8(&img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_blocks_downsample_exactly() {
        let block = |x: u32, y: u32| {
            let v = f64::from((x / 2 * 37 + y / 2 * 11) % 256);
            [v, 255.0 - v, (v * 0.5).floor()]
        };
        let big = Tile::from_fn(512, 512, block).unwrap();
        let small = area_resize(&big, 256, 256).unwrap();
        let expected = Tile::from_fn(256, 256, |x, y| block(2 * x, 2 * y)).unwrap();
        assert_eq!(small, expected);
    }

    #[test]
    fn fractional_box_weights() {
        // 3 -> 2: output 0 covers [0, 1.5): 2/3 of px0 + 1/3 of px1
        let t = Tile::new(3, 1, vec![0.0, 0.0, 0.0, 30.0, 30.0, 30.0, 90.0, 90.0, 90.0]).unwrap();
        let out = area_resize(&t, 2, 1).unwrap();
        assert!((out.pixel(0)[0] - 10.0).abs() < 1e-12);
        assert!((out.pixel(1)[0] - 70.0).abs() < 1e-12);
    }

    #[test]
    fn resize_512_to_224_preserves_constant_and_mean() {
        let c = Tile::filled(512, 512, [12.0, 200.0, 77.0]).unwrap();
        let out = area_resize(&c, 224, 224).unwrap();
        assert_eq!(out.dims(), (224, 224));
        assert!(out
            .pixels()
            .all(|p| (p[0] - 12.0).abs() < 1e-9 && (p[1] - 200.0).abs() < 1e-9));

        let g = Tile::from_fn(512, 512, |x, y| [f64::from((x * 7 + y * 3) % 256); 3]).unwrap();
        let mean = |t: &Tile| t.data().iter().sum::<f64>() / t.data().len() as f64;
        assert!((mean(&g) - mean(&area_resize(&g, 224, 224).unwrap())).abs() < 1e-9);
    }

    #[test]
    fn nearest_mask_upsample_keeps_ratio_for_integer_factor() {
        let m = BurnMask::from_fn(4, 4, |x, y| x + y < 3).unwrap();
        let up = nearest_mask(&m, 8, 8).unwrap();
        assert_eq!(up.burned_count(), m.burned_count() * 4);
        assert!(up.data().iter().all(|&v| v <= 1));
    }
}
