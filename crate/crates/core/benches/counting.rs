use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use debias_core::corpus::Corpus;
use debias_core::par;
use debias_core::stab::{detect, DetectMode, Exclusions};
use debias_core::stats::{build_table, build_table_par, build_table_seq, table_from_reader};
use debias_core::synth::{generate, FeatureDims, SynthConfig};

fn corpus(per_class: usize) -> Corpus {
    let mut cfg = SynthConfig::preset(2, per_class, 0.05, 7);
    cfg.feature_dims = FeatureDims {
        n_target: 0,
        n_bias: 0,
        n_noise: 0,
    };
    generate(&cfg).expect("bench config is valid").train
}

fn counting(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_table");
    for per_class in [10_000, 100_000] {
        let data = corpus(per_class);
        g.throughput(Throughput::Elements(data.len() as u64));
        g.bench_with_input(BenchmarkId::new("sequential", data.len()), &data, |b, d| {
            b.iter(|| build_table_seq(black_box(d)))
        });
        g.bench_with_input(BenchmarkId::new("parallel", data.len()), &data, |b, d| {
            b.iter(|| build_table_par(black_box(d)))
        });
    }
    g.finish();
}

fn streaming(c: &mut Criterion) {
    let bytes = corpus(100_000).to_jsonl_bytes();
    let mut g = c.benchmark_group("table_from_reader");
    g.throughput(Throughput::Bytes(bytes.len() as u64));
    g.sample_size(10);
    for threads in [1, 2, 4, 0] {
        let name = if threads == 0 {
            "all".to_string()
        } else {
            threads.to_string()
        };
        g.bench_with_input(BenchmarkId::new("threads", name), &bytes, |b, bytes| {
            b.iter(|| {
                par::with_threads((threads > 0).then_some(threads), || {
                    table_from_reader(black_box(bytes.as_slice())).expect("valid corpus")
                })
            })
        });
    }
    g.finish();
}

fn detection(c: &mut Criterion) {
    let table = build_table(&corpus(100_000));
    c.bench_function("detect_both", |b| {
        b.iter(|| {
            detect(black_box(&table), DetectMode::Both, &Exclusions::new(), 3).expect("detects")
        })
    });
}

criterion_group!(benches, counting, streaming, detection);
criterion_main!(benches);
