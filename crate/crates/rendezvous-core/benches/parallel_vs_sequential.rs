//! Throughput comparison of the rayon-backed paths against their sequential
//! fallbacks: gain-sweep trials and saturation-constant sampling.
//!
//! Run with `cargo bench -p rendezvous-core`. Build with
//! `--no-default-features` to benchmark the fully sequential crate (the
//! `*_par` groups then collapse onto the sequential code path).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rendezvous_core::control::ControllerParams;
use rendezvous_core::lyapunov::{alpha_star_sampled, alpha_star_sampled_seq, gamma_vector};
use rendezvous_core::presets::{five_robot_graph, table_initial_conditions};
use rendezvous_core::sim::{k1_sweep, k1_sweep_seq, Controller, Scenario, SweepConfig};

fn sweep_template() -> Scenario {
    let graph = five_robot_graph();
    let params = ControllerParams::new(&graph, 1.0).unwrap();
    Scenario::new(
        graph,
        table_initial_conditions(),
        params,
        Controller::Ccp,
        1e-2,
        60.0,
        1.0,
        1,
    )
    .unwrap()
}

fn bench_sweep(c: &mut Criterion) {
    let template = sweep_template();
    let mut group = c.benchmark_group("k1_sweep");
    group.sample_size(10);
    for &trials in &[8usize, 16] {
        let cfg = SweepConfig {
            k1_values: vec![0.1, 1.0],
            trials,
            seed: 42,
            ic_half_width: 20.0,
        };
        group.bench_with_input(BenchmarkId::new("sequential", trials), &cfg, |b, cfg| {
            b.iter(|| k1_sweep_seq(&template, cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("parallel", trials), &cfg, |b, cfg| {
            b.iter(|| k1_sweep(&template, cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_alpha_star_sampling(c: &mut Criterion) {
    let graph = five_robot_graph();
    let nodes = [2usize, 3, 4];
    let gamma = gamma_vector(&graph, &nodes).unwrap();
    let mut group = c.benchmark_group("alpha_star_sampled");
    for &samples in &[100_000usize, 1_000_000] {
        group.bench_with_input(
            BenchmarkId::new("sequential", samples),
            &samples,
            |b, &s| b.iter(|| alpha_star_sampled_seq(&graph, &nodes, &gamma, s, 7)),
        );
        group.bench_with_input(BenchmarkId::new("parallel", samples), &samples, |b, &s| {
            b.iter(|| alpha_star_sampled(&graph, &nodes, &gamma, s, 7))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_sweep, bench_alpha_star_sampling);
criterion_main!(benches);
