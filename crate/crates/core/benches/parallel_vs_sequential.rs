//! Parallel vs sequential execution of the data-parallel loops. Results are
//! identical in both modes; only wall time differs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hedonic_core::dyntvp::{sample, DynamicData, DynamicSpec, SampleConfig};
use hedonic_core::exec::Exec;
use hedonic_core::imgfeat::{extract_dir, ExtractConfig};
use hedonic_core::robust::cycle_block_bootstrap;
use hedonic_core::synth::{gen_dynamic_cells, gen_images, write_images, ImageSpec, SyntheticDynamicSpec};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bootstrap(c: &mut Criterion) {
    let means = [0.018, 0.012, 0.011, 0.001, -0.004, -0.005, -0.006, -0.008, -0.008, -0.049];
    let mut g = c.benchmark_group("bootstrap_50k");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| cycle_block_bootstrap(&means, 50_000, 1, exec).unwrap())
        });
    }
    g.finish();
}

fn extraction(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    write_images(&gen_images(&ImageSpec::default()), dir.path()).unwrap();
    let images = dir.path().join("images");
    let cfg = ExtractConfig { cnn_pcs: 0, style_pcs: 0, ..Default::default() };
    let mut g = c.benchmark_group("extract_fixtures");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| extract_dir(&images, &cfg, exec).unwrap()));
    }
    g.finish();
}

fn sampler(c: &mut Criterion) {
    let s = SyntheticDynamicSpec { n_collections: 8, cells_per_collection_cycle: 10, ..Default::default() };
    let (cells, _) = gen_dynamic_cells(&s).unwrap();
    let spec = DynamicSpec {
        tvp_block: vec!["COMPOSITION_FOCUS_SATURATION".into()],
        n_cycles: s.n_cycles,
        ..Default::default()
    };
    let data = DynamicData::from_cells(&cells, &spec, None).unwrap();
    let cfg = SampleConfig { n_tune: 50, n_draws: 50, n_chains: 4, seed: 1, likelihood: true };
    let mut g = c.benchmark_group("sampler_4_chains");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| sample(&data, &spec, &cfg, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bootstrap, extraction, sampler);
criterion_main!(benches);
