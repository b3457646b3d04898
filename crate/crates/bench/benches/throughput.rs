use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sdvo_core::annf::{build_annf, DistanceField};
use sdvo_core::config::VoConfig;
use sdvo_core::dataset::{render_frame, render_synthetic, synthetic_extractor, SyntheticScene};
use sdvo_core::image::{extractor_pipeline, ExtractorConfig, ExtractorVariant};
use sdvo_core::pipeline::Pipeline;
use sdvo_core::registration::{gradient_descent_solve, GradientDescentOptions, RegistrationConfig};
use sdvo_core::study::standard_convergence_fixture;
use sdvo_core::Pose;

fn desk_frame() -> sdvo_core::GrayImage {
    let mut scene = SyntheticScene::desk(1, 1);
    scene.noise.intensity_std = 0.01;
    render_frame(&scene, &Pose::identity(), 0).expect("render").0
}

fn extraction(c: &mut Criterion) {
    let gray = desk_frame();
    let mut group = c.benchmark_group("extraction_640x480");
    for variant in ExtractorVariant::ALL {
        let cfg = ExtractorConfig {
            variant,
            ..ExtractorConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(variant.name()), &cfg, |b, cfg| {
            b.iter(|| extractor_pipeline(black_box(&gray), cfg).expect("region"))
        });
    }
    group.finish();

    let cfg = ExtractorConfig::default();
    let region = extractor_pipeline(&gray, &cfg).expect("region");
    c.bench_function("annf_640x480", |b| b.iter(|| build_annf(black_box(&region), 640, 480).expect("field")));
    c.bench_function("extraction_plus_annf_640x480", |b| {
        b.iter(|| {
            let region = extractor_pipeline(black_box(&gray), &cfg).expect("region");
            build_annf(&region, 640, 480).expect("field")
        })
    });
}

fn registration(c: &mut Criterion) {
    let (fix, init) = standard_convergence_fixture().expect("fixture");
    let mut group = c.benchmark_group("registration");
    for (name, parallel) in [("gauss_newton_sequential", false), ("gauss_newton_parallel", true)] {
        let cfg = RegistrationConfig {
            parallel,
            ..RegistrationConfig::default()
        };
        group.bench_function(name, |b| b.iter(|| fix.solve(black_box(init), &cfg).expect("solve")));
    }
    let df = DistanceField::from_annf(&fix.field);
    let opts = GradientDescentOptions {
        max_iterations: 100,
        ..GradientDescentOptions::default()
    };
    group.bench_function("distance_field_gd_100_iterations", |b| {
        b.iter(|| gradient_descent_solve(&fix.map, &df, &fix.intrinsics, black_box(&init), &opts).expect("gd"))
    });
    group.finish();
}

fn tracking(c: &mut Criterion) {
    let scene = SyntheticScene::desk(2, 10).with_constant_velocity(
        10,
        nalgebra::Vector3::new(0.0, 0.001, 0.0),
        nalgebra::Vector3::new(0.001, 0.0, 0.0),
    );
    let frames = render_synthetic(&scene).expect("render");
    let cfg = VoConfig {
        extractor: synthetic_extractor(),
        async_keyframes: false,
        ..VoConfig::default()
    };
    c.bench_function("pipeline_10_frames", |b| {
        b.iter(|| {
            let mut p = Pipeline::new(cfg.clone(), scene.intrinsics).expect("pipeline");
            for f in &frames {
                black_box(p.process_frame(&f.gray, f.depth.clone(), f.timestamp).expect("frame"));
            }
        })
    });
}

criterion_group!(benches, extraction, registration, tracking);
criterion_main!(benches);
