use std::hint::black_box;

use causal_twin::discovery::tdmi;
use causal_twin::{augment, discover, DiscoveryConfig};
use causal_twin_bench::{plant_frame, warm_detector};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn score_step(c: &mut Criterion) {
    let (plant, frame) = plant_frame(2000, 1);
    let mut det = warm_detector(&plant, &frame);
    let mut t = det.scm().max_lag() + 1;
    c.bench_function("score_step/n51", |b| {
        b.iter(|| {
            let v = det.step(t as i64, black_box(frame.row(t))).unwrap();
            t = if t + 1 < frame.len() { t + 1 } else { 10 };
            v.mcai
        })
    });
}

fn tdmi_pair(c: &mut Criterion) {
    let (_, frame) = plant_frame(20_000, 2);
    let x = frame.column(0);
    let y = frame.column(1);
    c.bench_function("tdmi/20k_rows_16_bins", |b| {
        b.iter(|| tdmi(black_box(&x), black_box(&y), 1, 16).unwrap().nats)
    });
}

fn discover_plant(c: &mut Criterion) {
    let (plant, frame) = plant_frame(5_000, 3);
    let aug = augment(&frame, 5).unwrap();
    let mut g = c.benchmark_group("discover");
    g.sample_size(10);
    g.bench_function("swat51/5k_rows", |b| {
        b.iter_batched(
            || DiscoveryConfig::default(),
            |cfg| discover(&aug, &plant.meta, &plant.catalog, &cfg).unwrap().n_edges(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, score_step, tdmi_pair, discover_plant);
criterion_main!(benches);
