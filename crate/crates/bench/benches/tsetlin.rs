use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pstm_bench::multimodal;
use pstm_core::ensemble::train_baseline;
use pstm_core::{presort, EarlyStop, EnsemblePlan, PresortConfig, RoutingMode, TmParams, TrainOptions, TsetlinMachine};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn params() -> TmParams {
    TmParams {
        clauses_per_class: 100,
        threshold: 15,
        specificity: 5.0,
        states: 256,
        epochs: 3,
        seed: 1,
    }
}

fn training(c: &mut Criterion) {
    let data = multimodal(4, 4, 25, 256, 1);
    c.bench_function("train_epoch_400x256", |b| {
        b.iter_batched(
            || (TsetlinMachine::new(params(), 256, 4).unwrap(), ChaCha8Rng::seed_from_u64(2)),
            |(mut tm, mut rng)| tm.train_epoch(&data, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn inference(c: &mut Criterion) {
    let data = multimodal(4, 4, 25, 256, 2);
    let (base, _) = train_baseline(&data, &params(), None).unwrap();
    let sorted = presort(&data, &PresortConfig { k: 4, ..Default::default() }).unwrap();
    let plan = EnsemblePlan::new(&sorted, &params(), RoutingMode::NearestMedoid).unwrap();
    let opts = TrainOptions {
        early_stop: EarlyStop::Off,
        ..Default::default()
    };
    let (ens, _) = plan.train_parallel(&data, &opts, None).unwrap();

    let mut g = c.benchmark_group("classify_400");
    g.bench_function("baseline", |b| b.iter(|| data.points().iter().map(|x| base.predict(black_box(x))).sum::<usize>()));
    g.bench_function("presorted_k4", |b| b.iter(|| data.points().iter().map(|x| ens.classify(black_box(x))).sum::<usize>()));
    g.finish();
}

criterion_group!(benches, training, inference);
criterion_main!(benches);
