use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stgkd_bench::fixture;
use stgkd_core::losses::{
    loss_ord, loss_rd_kl, loss_rd_l2, loss_scd, loss_stcd, loss_tcd, LossWeights, ResponseTriple,
};

fn bench_losses(c: &mut Criterion) {
    let (teacher, lap, cfg) = fixture(24);
    let (student, _, _) = fixture(24);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array4::from_shape_simple_fn((16, cfg.input_window, 24, 1), || rng.gen_range(-1.0..1.0));
    let target = Array4::from_shape_simple_fn((16, 1, 24, 1), || rng.gen_range(-1.0..1.0));
    let (y_t, taps_t) = teacher.forward_with_taps(&x, &lap).unwrap();
    let (y_s, taps_s) = student.forward_with_taps(&x, &lap).unwrap();
    let r = ResponseTriple::new(&y_s, &y_t, &target).unwrap();
    let w = LossWeights { beta: 0.5, alpha1: 0.5, alpha2: 0.4, alpha3: 0.3 };

    c.bench_function("rd_l2", |b| b.iter(|| loss_rd_l2(&r, 0.5).unwrap()));
    c.bench_function("rd_kl", |b| b.iter(|| loss_rd_kl(&r, 0.5).unwrap()));
    c.bench_function("ord", |b| b.iter(|| loss_ord(&r, 0.5).unwrap()));
    c.bench_function("tcd", |b| {
        b.iter(|| loss_tcd(&taps_s.temporal, &taps_t.temporal).unwrap())
    });
    c.bench_function("scd", |b| {
        b.iter(|| loss_scd(&taps_s.spatial, &taps_t.spatial).unwrap())
    });
    c.bench_function("stcd", |b| {
        b.iter(|| loss_stcd(&r, &taps_s, &taps_t, &w).unwrap())
    });
}

criterion_group!(benches, bench_losses);
criterion_main!(benches);
