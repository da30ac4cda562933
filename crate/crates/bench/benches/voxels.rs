use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fusescan_bench::scene_cloud;
use fusescan_core::geometry::{downsample_voxels, voxelize, CentroidMode};

fn voxels(c: &mut Criterion) {
    let (spec, cloud) = scene_cloud(0).unwrap();
    c.bench_function("voxelize", |b| b.iter(|| voxelize(&cloud, &spec.grid).unwrap()));
    let vs = voxelize(&cloud, &spec.grid).unwrap();
    let mut group = c.benchmark_group("downsample");
    for (name, mode) in [("continuous", CentroidMode::Continuous), ("discrete", CentroidMode::Discrete)] {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| downsample_voxels(&vs, [2, 2, 2], mode).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, voxels);
criterion_main!(benches);
