use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use paircluster::variance::{cluster_labels, clustered_variance};
use paircluster::{crve_sandwich, diff_in_means, fe_estimate, Clustering, VarianceSet};
use paircluster_bench::experiment;

fn fits(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    for &(p, n) in &[(100usize, 10usize), (100, 100), (1000, 100)] {
        let (data, a) = experiment(2, p, n);
        group.throughput(Throughput::Elements(data.n_total() as u64));
        let id = format!("P{p}_n{n}");
        group.bench_with_input(BenchmarkId::new("diff_in_means", &id), &(), |b, _| {
            b.iter(|| diff_in_means(black_box(&data), black_box(&a)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fe_estimate", &id), &(), |b, _| {
            b.iter(|| fe_estimate(black_box(&data), black_box(&a)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("variance_set", &id), &(), |b, _| {
            b.iter(|| VarianceSet::compute(black_box(&data), black_box(&a)).unwrap())
        });
    }
    group.finish();
}

/// Closed-form route against the demeaned sandwich and the dense sandwich.
fn variance_routes(c: &mut Criterion) {
    let mut group = c.benchmark_group("variance_routes");
    let (data, a) = experiment(2, 50, 5);
    let fe = fe_estimate(&data, &a).unwrap();
    group.bench_function("closed_form_fe", |b| {
        b.iter(|| paircluster::pcve_fe(black_box(&data), black_box(&a), black_box(&fe)).unwrap())
    });
    group.bench_function("demeaned_sandwich_fe", |b| {
        b.iter(|| {
            clustered_variance(
                black_box(&data),
                black_box(&a),
                black_box(&fe),
                Clustering::Block,
            )
            .unwrap()
        })
    });

    let n = data.n_total();
    let k = data.n_pairs() + 1;
    let mut x = nalgebra::DMatrix::zeros(n, k);
    for (p, g, unit, start) in data.units_with_offsets() {
        for i in start..start + unit.len() {
            x[(i, 0)] = f64::from(u8::from(a.is_treated(p, g)));
            x[(i, 1 + p)] = 1.0;
        }
    }
    let labels = cluster_labels(&data, Clustering::Block);
    group.bench_function("dense_sandwich_fe", |b| {
        b.iter(|| {
            crve_sandwich(black_box(&x), black_box(&fe.residuals), black_box(&labels)).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, fits, variance_routes);
criterion_main!(benches);
