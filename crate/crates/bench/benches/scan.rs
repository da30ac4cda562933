use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use fusescan_bench::uniform_input;
use fusescan_core::harness::attention_forward;
use fusescan_core::ssm::{hippo_init, selective_scan_parallel, selective_scan_seq};
use fusescan_core::SeededRng;

fn scan(c: &mut Criterion) {
    let params = hippo_init(16, 16, &mut SeededRng::new(1)).unwrap();
    let mut group = c.benchmark_group("selective_scan");
    group.sample_size(20);
    for n in [4096, 16384, 65536] {
        let x = uniform_input(n, 16, n as u64).unwrap();
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("sequential", n), &x, |b, x| b.iter(|| selective_scan_seq(&params, x).unwrap()));
        group.bench_with_input(BenchmarkId::new("parallel", n), &x, |b, x| b.iter(|| selective_scan_parallel(&params, x).unwrap()));
    }
    group.finish();
}

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    group.sample_size(10);
    for n in [512, 1024, 2048] {
        let x = uniform_input(n, 16, n as u64).unwrap();
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| b.iter(|| attention_forward(x).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, scan, attention);
criterion_main!(benches);
