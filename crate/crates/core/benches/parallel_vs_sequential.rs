use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hypsep::manifold::Curvature;
use hypsep::nn::{EncoderConfig, HierarchySpec, Levels, Model, ModelConfig, Resynthesis};
use hypsep::par;
use hypsep::scene::{generate_split, render, DatasetConfig, DensityPreset, RenderConfig, Split, DEFAULT_TAU};
use hypsep::train::{example_gradients, prepare_examples};

fn dataset() -> DatasetConfig {
    DatasetConfig {
        seed: 11,
        tau: DEFAULT_TAU,
        hierarchy: HierarchySpec::new(2).unwrap(),
        render: RenderConfig {
            sample_rate: 8000,
            seconds: 1.0,
        },
        densities: DensityPreset::Table1Desk.splits(8, 5, 1),
    }
}

fn bench_render(c: &mut Criterion) {
    let manifest = generate_split(&dataset(), Split::Train).unwrap();
    let cfg = manifest.render;
    let mut group = c.benchmark_group("render_scenes");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("parallel", manifest.scenes.len()), |b| {
        b.iter(|| par::map(&manifest.scenes, |_, r| render(r, &cfg)))
    });
    group.bench_function(BenchmarkId::new("sequential", manifest.scenes.len()), |b| {
        b.iter(|| par::map_sequential(&manifest.scenes, |_, r| render(r, &cfg)))
    });
    group.finish();
}

fn bench_batch_gradients(c: &mut Criterion) {
    let ds = dataset();
    let manifest = generate_split(&ds, Split::Train).unwrap();
    let examples = prepare_examples(&manifest, &ds.hierarchy).unwrap();
    let model = Model::new(
        ModelConfig {
            encoder: EncoderConfig::desk(examples[0].bins),
            hierarchy: ds.hierarchy,
            levels: Levels::Two,
            curvature: Curvature::new(-1.0).unwrap(),
            resynthesis: Resynthesis::Joint,
        },
        &mut hypsep::scene::stream_rng(0, 0),
    )
    .unwrap();
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    let grad = |_: usize, ex: &hypsep::train::Example| example_gradients(&model, ex, None).unwrap();
    group.bench_function(BenchmarkId::new("parallel", examples.len()), |b| b.iter(|| par::map(&examples, grad)));
    group.bench_function(BenchmarkId::new("sequential", examples.len()), |b| {
        b.iter(|| par::map_sequential(&examples, grad))
    });
    group.finish();
}

criterion_group!(benches, bench_render, bench_batch_gradients);
criterion_main!(benches);
