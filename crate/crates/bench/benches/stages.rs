use criterion::{criterion_group, criterion_main, Criterion};
use plumewatch_bench::{random_mask, Scene};
use plumewatch_core::change::{clahe, dog_filter, entropy_filter};
use plumewatch_core::pipeline::{Detector, FrameInputs};
use plumewatch_core::texture::{build_filter_bank, cluster_textons, compute_features, pca_reduce};
use std::hint::black_box;

fn stages(c: &mut Criterion) {
    // frame 450 sits inside the plume
    let scene = Scene::around(450);
    let cfg = scene.config.clone();
    let frame = scene.current();
    let (w, h) = frame.dims();
    let bank = build_filter_bank();

    c.bench_function("dog_filter", |b| b.iter(|| dog_filter(black_box(frame), &cfg.dog).unwrap()));

    let mask = random_mask(w, h, 0.3, 1);
    c.bench_function("entropy_filter", |b| b.iter(|| entropy_filter(black_box(&mask))));

    c.bench_function("clahe", |b| b.iter(|| clahe(black_box(frame), &cfg.clahe).unwrap()));

    c.bench_function("laws_features", |b| b.iter(|| compute_features(black_box(frame), &bank)));

    let features = compute_features(frame, &bank).centered();
    c.bench_function("pca", |b| {
        b.iter(|| pca_reduce(black_box(&features), cfg.texture.energy, cfg.texture.pca_fit_rows, 7).unwrap())
    });

    let reduced = pca_reduce(&features, cfg.texture.energy, cfg.texture.pca_fit_rows, 7).unwrap();
    c.bench_function("kmeans", |b| {
        b.iter(|| {
            cluster_textons(black_box(&reduced.projected), w, h, cfg.texture.textons, cfg.texture.max_iterations, 7)
                .unwrap()
        })
    });

    let model = scene.model();
    c.bench_function("background_median", |b| b.iter(|| black_box(&model).background().unwrap()));

    let detector = Detector::new(cfg.clone()).unwrap();
    let background = model.background().unwrap();
    let inputs = FrameInputs {
        current: frame,
        previous: scene.previous(),
        background: &background,
    };
    c.bench_function("full_frame", |b| b.iter(|| detector.process_frame(black_box(inputs), true).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = stages
}
criterion_main!(benches);
