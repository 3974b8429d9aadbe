use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use mocha::actor::ActorConfig;
use mocha::critic::{run_critic_with, CriticConfig, CriticState};
use mocha::explorer::{explore, generate_weight_grid, Sweep};
use mocha::momdp::{stream_rng, MarkovStream};
use mocha::oracle::brute_force_pareto_front;
use mocha::{fixtures, FeatureMap, Mode, SoftmaxPolicy};

fn sweep(c: &mut Criterion) {
    let m = fixtures::conflicting_5x3();
    let init = SoftmaxPolicy::zeros(5, 3);
    let feats = FeatureMap::identity(5);
    let critic = CriticConfig::new(0.1, 50, 32, Mode::Discounted);
    let actor = ActorConfig::new(2.0, 128, 20);
    let s = Sweep { momdp: &m, policy_init: &init, features: &feats, critic: &critic, actor: &actor, converged_gap_tol: 5e-2 };
    let grid = generate_weight_grid(2, 7).unwrap();
    let seeds = [0, 1];
    let mut g = c.benchmark_group("explore");
    g.sample_size(10);
    g.bench_function("sequential", |b| b.iter(|| black_box(explore(&s, &grid, &seeds, 1))));
    g.bench_function("parallel", |b| b.iter(|| black_box(explore(&s, &grid, &seeds, 0))));
    g.finish();
}

fn front(c: &mut Criterion) {
    let m = fixtures::five_objective_4x5();
    let mut g = c.benchmark_group("pareto_front");
    g.bench_function("sequential", |b| b.iter(|| black_box(brute_force_pareto_front(&m, Mode::Discounted, false).unwrap())));
    g.bench_function("parallel", |b| b.iter(|| black_box(brute_force_pareto_front(&m, Mode::Discounted, true).unwrap())));
    g.finish();
}

fn critic(c: &mut Criterion) {
    let m = fixtures::five_objective_4x5();
    let table = SoftmaxPolicy::zeros(4, 5).table();
    let feats = FeatureMap::identity(4);
    let cfg = CriticConfig::new(0.1, 20, 4096, Mode::Discounted);
    let mut g = c.benchmark_group("critic");
    g.sample_size(20);
    for (name, parallel) in [("sequential", false), ("parallel", true)] {
        g.bench_function(name, |b| {
            b.iter(|| {
                let mut stream = MarkovStream::from_start(&m, stream_rng(3));
                black_box(run_critic_with(&m, &table, &feats, &cfg, CriticState::zeros(5, 4), &mut stream, parallel).unwrap())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, sweep, front, critic);
criterion_main!(benches);
