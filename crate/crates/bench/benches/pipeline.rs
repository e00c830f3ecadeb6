//! Throughput of the radar chain at the default numerology and of one
//! complete corpus scenario.

use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, Criterion};

use isac_bench::{desk_channel, three_movers};
use isac_core::l1sens::{clutter_removal, detect_targets, periodogram, DetectConfig, Window};
use isac_core::sim::{self, ScenarioConfig};

fn radar_chain(c: &mut Criterion) {
    let h = desk_channel(&three_movers());
    let (n, m) = h.shape();
    let mut g = c.benchmark_group("radar_chain");
    g.bench_function("clutter_removal", |b| {
        b.iter(|| clutter_removal(black_box(&h)))
    });
    g.bench_function("periodogram_1x", |b| {
        b.iter(|| periodogram(black_box(&h), n, m, Window::Rectangular).unwrap())
    });
    g.bench_function("periodogram_4x_blackman_harris", |b| {
        b.iter(|| periodogram(black_box(&h), 4 * n, 4 * m, Window::BlackmanHarris).unwrap())
    });
    let p = periodogram(&clutter_removal(&h), n, m, Window::Rectangular).unwrap();
    let cfg = DetectConfig::default();
    g.bench_function("detect_targets", |b| {
        b.iter(|| detect_targets(black_box(&p), &cfg))
    });
    g.finish();
}

fn scenario_run(c: &mut Criterion) {
    let path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/one-car-monostatic.json");
    let cfg = ScenarioConfig::load(path).expect("corpus scenario loads");
    let mut g = c.benchmark_group("scenario");
    g.sample_size(10);
    g.bench_function("one_car_monostatic", |b| {
        b.iter(|| sim::run(black_box(&cfg)))
    });
    g.finish();
}

criterion_group!(benches, radar_chain, scenario_run);
criterion_main!(benches);
