use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use pepr_core::model::{GroupScheme, HeadVariant, PeprModel};
use pepr_core::nn::Mode;
use pepr_core::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(rows: usize, cols: usize) -> Tensor2 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Tensor2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn desk_model(width_factor: f64) -> PeprModel {
    let scheme = GroupScheme::even_split(100, 10).unwrap();
    PeprModel::build(64, HeadVariant::Grouped(scheme), width_factor, 0, 1).unwrap()
}

fn forward(c: &mut Criterion) {
    let x = batch(128, 64);
    let mut g = c.benchmark_group("embedder");
    for wf in [0.25, 0.5, 1.0] {
        let model = desk_model(wf);
        g.bench_with_input(BenchmarkId::new("eval", wf), &x, |b, x| {
            b.iter(|| model.embedder.predict(black_box(x)).unwrap())
        });
        let mut net = model.embedder.clone();
        g.bench_with_input(BenchmarkId::new("train-forward-backward", wf), &x, |b, x| {
            b.iter(|| {
                let y = net.forward(black_box(x), Mode::Train).unwrap();
                net.backward(&y).unwrap()
            })
        });
    }
    g.finish();
}

fn regressor(c: &mut Criterion) {
    let model = desk_model(0.25);
    let y = model.embed_and_classify(&batch(128, 64)).unwrap().probs;
    let reg = &model.regressors[0];
    c.bench_function("regressor/eval/128", |b| b.iter(|| reg.predict(black_box(&y)).unwrap()));
}

criterion_group!(benches, forward, regressor);
criterion_main!(benches);
