use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use forge_bench::scene_with_candidate;
use forge_core::compositor::{expand_rect, make_pair, object_bbox};
use forge_core::geometry::reproject_mask;
use forge_core::inpaint::{inpaint_native, InpaintParams};
use forge_core::pipeline::GenerateConfig;
use forge_core::PixelMask;

fn inpaint(c: &mut Criterion) {
    let mut g = c.benchmark_group("inpaint_native");
    g.sample_size(10);
    for (w, h) in [(320, 240), (1024, 768)] {
        let (bundle, cand) = scene_with_candidate(w, h);
        let v2 = bundle.frame(&cand.v2_id).unwrap();
        let region = expand_rect(object_bbox(v2, cand.object_id).unwrap(), 0.05, w, h).unwrap();
        let hole = PixelMask::from_rect(w, h, region);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{w}x{h}")), &hole, |b, hole| {
            b.iter(|| inpaint_native(&v2.rgb, hole, &InpaintParams::default()).unwrap())
        });
    }
    g.finish();
}

fn pair(c: &mut Criterion) {
    let mut g = c.benchmark_group("make_pair");
    g.sample_size(10);
    let (bundle, cand) = scene_with_candidate(1024, 768);
    let recipe = GenerateConfig::default().recipe(&cand);
    g.bench_function("inconsistent_1024x768", |b| b.iter(|| make_pair(&bundle, &recipe).unwrap()));
    g.finish();
}

fn reproject(c: &mut Criterion) {
    let (bundle, cand) = scene_with_candidate(1024, 768);
    let (v3, v2) = (bundle.frame(&cand.v3_id).unwrap(), bundle.frame(&cand.v2_id).unwrap());
    let mask = PixelMask::from_instance(&v3.instances, cand.object_id);
    c.bench_function("reproject_mask_1024x768", |b| {
        b.iter(|| reproject_mask(&mask, &v3.depth, &v3.camera, &v2.camera, v2.rgb.dimensions()))
    });
}

criterion_group!(benches, inpaint, pair, reproject);
criterion_main!(benches);
