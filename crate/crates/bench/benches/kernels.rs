use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fedpob_bench::{information_matrix, random_vec, rng};
use fedpob_core::pref::PreferenceRecord;
use fedpob_core::{
    decode_envelope, encode_envelope, pairwise_loss_gradient, select_arm, ArmId, SymMatrix,
    SyncEnvelope, Vector,
};

fn bench_cholesky_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("cholesky_solve");
    for dim in [16usize, 64, 256, 768] {
        let mut gen = rng(dim as u64);
        let a = information_matrix(dim, 2 * dim, &mut gen);
        let b = random_vec(dim, &mut gen);
        group.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |bench, _| {
            bench.iter(|| {
                let factor = black_box(&a).cholesky().unwrap();
                black_box(factor.solve(&b).unwrap());
            })
        });
    }
    group.finish();
}

fn bench_ucb_selection(c: &mut Criterion) {
    let dim = 16;
    let k = 100;
    let mut gen = rng(7);
    let info = information_matrix(dim, 200, &mut gen);
    let theta = random_vec(dim, &mut gen);
    let arms_owned: Vec<Vector> = (0..k).map(|_| random_vec(dim, &mut gen)).collect();
    let arms: Vec<(ArmId, &Vector)> = arms_owned
        .iter()
        .enumerate()
        .map(|(i, u)| (i as ArmId, u))
        .collect();
    c.bench_function("select_arm_100x16", |b| {
        b.iter(|| black_box(select_arm(&theta, &info, &arms, 0.3).unwrap()))
    });
}

fn bench_pairwise_gradient(c: &mut Criterion) {
    let dim = 16;
    let mut gen = rng(11);
    let history: Vec<PreferenceRecord> = (0..50)
        .map(|_| PreferenceRecord {
            first: random_vec(dim, &mut gen),
            second: random_vec(dim, &mut gen),
            outcome: true,
        })
        .collect();
    let theta = random_vec(dim, &mut gen);
    c.bench_function("pairwise_gradient_50x16", |b| {
        b.iter(|| black_box(pairwise_loss_gradient(&theta, &history)))
    });
}

fn bench_envelope_codec(c: &mut Criterion) {
    let dim = 16;
    let mut gen = rng(23);
    let gram = information_matrix(dim, 10, &mut gen);
    let moment = random_vec(dim, &mut gen);
    let env = SyncEnvelope::delta_upload(0, 1, &gram, &moment);
    c.bench_function("envelope_roundtrip_d16", |b| {
        b.iter(|| {
            let bytes = encode_envelope(black_box(&env)).unwrap();
            black_box(decode_envelope(&bytes).unwrap());
        })
    });

    let zero = SymMatrix::zeros(dim);
    let upload = SyncEnvelope::pref_upload(0, 1, &moment, &moment, &zero);
    c.bench_function("envelope_encode_pref_d16", |b| {
        b.iter(|| black_box(encode_envelope(black_box(&upload)).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_cholesky_solve,
    bench_ucb_selection,
    bench_pairwise_gradient,
    bench_envelope_codec
);
criterion_main!(benches);
