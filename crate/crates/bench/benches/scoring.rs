//! Per-example cost of each score. KLM grows with the class count; the
//! regressor-based scores depend only on network width.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use pepr_core::model::build_regressor;
use pepr_core::nn::softmax_rows;
use pepr_core::scoring::{score_cpepr, score_klm, score_msp, KlmTemplates, DEFAULT_PSI};
use pepr_core::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn probs(rows: usize, classes: usize) -> Tensor2 {
    let mut rng = ChaCha8Rng::seed_from_u64(classes as u64);
    let logits = (0..rows * classes).map(|_| rng.gen_range(-3.0..3.0)).collect();
    softmax_rows(&Tensor2::from_vec(rows, classes, logits).unwrap())
}

fn by_class_count(c: &mut Criterion) {
    let mut g = c.benchmark_group("score-256-rows");
    for classes in [10, 100, 1000] {
        let y = probs(256, classes);
        let fit_rows = probs(classes.max(256), classes);
        let fit_labels: Vec<usize> = (0..fit_rows.rows()).map(|i| i % classes).collect();
        let templates = KlmTemplates::fit(&fit_rows, &fit_labels).unwrap();
        g.bench_with_input(BenchmarkId::new("klm", classes), &y, |b, y| {
            b.iter(|| score_klm(black_box(y), &templates).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("msp", classes), &y, |b, y| {
            b.iter(|| score_msp(black_box(y)).unwrap())
        });
        let z = probs(256, 64);
        let reg = build_regressor(classes, 64, 0.25, 0).unwrap();
        g.bench_with_input(BenchmarkId::new("cpepr", classes), &y, |b, y| {
            b.iter(|| score_cpepr(black_box(y), &z, &reg, DEFAULT_PSI).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, by_class_count);
criterion_main!(benches);
