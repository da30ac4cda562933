use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use fusescan_bench::uniform_input;
use fusescan_core::serialization::{sort_tokens, CurveOrder, Paradigm, Quantizer};
use fusescan_core::{Modality, TokenSequence};

fn encode(c: &mut Criterion) {
    let mut group = c.benchmark_group("curve_index");
    for p in [Paradigm::Hilbert, Paradigm::Zorder, Paradigm::Coordinate] {
        let curve = CurveOrder::new(p, 5).unwrap();
        group.throughput(Throughput::Elements(curve.cell_count()));
        group.bench_function(BenchmarkId::from_parameter(p.as_str()), |b| {
            b.iter(|| (0..curve.cell_count()).map(|i| curve.index(curve.inverse(i).unwrap()).unwrap()).sum::<u64>())
        });
    }
    group.finish();
}

fn sort(c: &mut Criterion) {
    let n = 20000;
    let coords: Vec<[f64; 3]> = (0..n).map(|i| [(i * 7919 % 128) as f64, (i * 104729 % 128) as f64, (i % 32) as f64]).collect();
    let tokens = TokenSequence::uniform(uniform_input(n, 4, 3).unwrap(), coords, Modality::Lidar).unwrap();
    let curve = CurveOrder::new(Paradigm::Hilbert, 7).unwrap();
    c.bench_function("sort_tokens_hilbert_20k", |b| b.iter(|| sort_tokens(&tokens, curve, &Quantizer::cells()).unwrap()));
}

criterion_group!(benches, encode, sort);
criterion_main!(benches);
