use criterion::{criterion_group, criterion_main, Criterion};
use folim_bench::cycle;
use folim_core::evaluation::{estimate_stone_pairing, stone_pairing};
use folim_core::logic::parse_formula;
use folim_core::Caps;

fn bench_exact_pairings(c: &mut Criterion) {
    let caps = Caps::default();
    let graph = cycle(60);
    let guarded = parse_formula("exists>=2 y (dist(x1,y)<=2 & y~x1)", None).unwrap();
    let pair = parse_formula("exists z (x1~z & z~x2)", None).unwrap();
    let mut group = c.benchmark_group("exact-pairing");
    group.sample_size(20);
    group.bench_function("unary-guarded-c60", |b| {
        b.iter(|| stone_pairing(&graph, &guarded, 1, &caps).unwrap())
    });
    group.bench_function("binary-path2-c60", |b| {
        b.iter(|| stone_pairing(&graph, &pair, 2, &caps).unwrap())
    });
    group.finish();
}

fn bench_estimates(c: &mut Criterion) {
    let graph = cycle(500);
    let formula = parse_formula("exists z (x1~z & z~x2)", None).unwrap();
    let mut group = c.benchmark_group("sampled-pairing");
    group.sample_size(20);
    group.bench_function("binary-path2-c500-n2000", |b| {
        b.iter(|| estimate_stone_pairing(&graph, &formula, 2, 2000, 7, 0.99).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_exact_pairings, bench_estimates);
criterion_main!(benches);
