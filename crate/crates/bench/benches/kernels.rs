use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use conceptkit::editor::make_inpaint_mask;
use conceptkit::model::rasterize;
use conceptkit::segmentation::net::{image_to_input, Net};
use conceptkit::segmentation::{compute_iou, shapes_schema, synthetic_shapes, DEFAULT_ARCH};
use conceptkit::{Canvas, LabelMask, Rgb, SketchDocument, Stroke, StrokePoint};

fn scribble(strokes: usize, points: usize, seed: u64) -> SketchDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let canvas = Canvas {
        width: 512,
        height: 512,
    };
    let strokes = (0..strokes)
        .map(|_| Stroke {
            points: (0..points)
                .map(|t| StrokePoint {
                    x: rng.gen_range(0.0..511.0),
                    y: rng.gen_range(0.0..511.0),
                    t: t as u64 * 16,
                })
                .collect(),
            width: rng.gen_range(1.0..8.0),
            color: Rgb::BLACK,
        })
        .collect();
    SketchDocument::new(canvas, strokes)
}

fn bench_rasterize(c: &mut Criterion) {
    let mut g = c.benchmark_group("rasterize");
    for strokes in [10, 100] {
        let doc = scribble(strokes, 40, 1);
        g.bench_with_input(BenchmarkId::from_parameter(strokes), &doc, |b, doc| {
            b.iter(|| rasterize(black_box(doc)).unwrap())
        });
    }
    g.finish();
}

fn bench_iou(c: &mut Criterion) {
    let schema = shapes_schema();
    let mut g = c.benchmark_group("iou");
    for size in [64u32, 256] {
        let (_, gt) = synthetic_shapes(size, 1);
        let (_, pred) = synthetic_shapes(size, 2);
        g.bench_with_input(BenchmarkId::from_parameter(size), &(pred, gt), |b, (p, t): &(LabelMask, LabelMask)| {
            b.iter(|| compute_iou(black_box(p), black_box(t), &schema).unwrap())
        });
    }
    g.finish();
}

fn bench_dilation(c: &mut Criterion) {
    let (_, labels) = synthetic_shapes(256, 3);
    let region = labels.class_mask(1);
    let mut g = c.benchmark_group("inpaint_mask");
    for margin in [4u32, 16] {
        g.bench_with_input(BenchmarkId::from_parameter(margin), &margin, |b, &m| {
            b.iter(|| make_inpaint_mask(black_box(&region), m))
        });
    }
    g.finish();
}

fn bench_forward(c: &mut Criterion) {
    let net = Net::build(DEFAULT_ARCH, 4, 16, 0).unwrap();
    let (image, _) = synthetic_shapes(64, 4);
    let input = image_to_input(&image);
    c.bench_function("forward_64", |b| b.iter(|| net.forward(black_box(&input), 64, 64)));
}

criterion_group!(benches, bench_rasterize, bench_iou, bench_dilation, bench_forward);
criterion_main!(benches);
