use std::hint::black_box;

use burnbench_bench::{palette, samples};
use burnbench_core::color_match::{apply_color_matching, ColorMatchPolicy};
use burnbench_core::metrics::{adaptive_threshold, burn_iou, evaluate_sample, to_grayscale, SP_EPSILON};
use burnbench_core::resample::{area_resize, bilinear_rgb8, nearest_mask};
use burnbench_core::runner::enumerate_matrix;
use burnbench_core::{burn_ratio, Region};
use criterion::{criterion_group, criterion_main, Criterion};

fn metrics(c: &mut Criterion) {
    let samples = samples(4);
    let palette = palette(&samples[1..]);
    let sample = &samples[0];
    let after = sample.after.as_deref().expect("after tile");
    let gray = to_grayscale(after);
    let p = burn_ratio(&sample.mask);
    let setting = enumerate_matrix()[0];

    c.bench_function("adaptive_threshold_224", |b| {
        b.iter(|| adaptive_threshold(black_box(&gray), p))
    });
    c.bench_function("burn_iou_224", |b| b.iter(|| burn_iou(black_box(after), &sample.mask)));
    c.bench_function("evaluate_sample_224", |b| {
        b.iter(|| evaluate_sample(black_box(after), sample, &palette, &setting, SP_EPSILON))
    });
    let policy = ColorMatchPolicy::new(&[Region::Burned, Region::Intact], true).expect("policy");
    c.bench_function("color_match_224", |b| {
        b.iter(|| apply_color_matching(black_box(after), &sample.mask, &palette, &policy))
    });
}

fn resampling(c: &mut Criterion) {
    let samples = samples(1);
    let sample = &samples[0];
    let big = bilinear_rgb8(&sample.before, 512, 512).expect("upsample");
    c.bench_function("bilinear_224_to_512", |b| {
        b.iter(|| bilinear_rgb8(black_box(&sample.before), 512, 512))
    });
    c.bench_function("nearest_mask_224_to_512", |b| {
        b.iter(|| nearest_mask(black_box(&sample.mask), 512, 512))
    });
    c.bench_function("area_resize_512_to_224", |b| {
        b.iter(|| area_resize(black_box(&big), 224, 224))
    });
}

criterion_group!(benches, metrics, resampling);
criterion_main!(benches);
