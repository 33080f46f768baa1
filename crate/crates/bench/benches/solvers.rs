use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semlab_bench::fixture;
use semlab_core::dice::{solve_dual, update_from_buffer, LearnerState, SolveMode, SolveOptions};
use semlab_core::harness::online_semdice_defaults;
use semlab_core::mdp::stationary_distribution;
use semlab_core::oracle::{frank_wolfe_sem, FrankWolfeOptions};
use semlab_core::{Estimator, SemdiceConfig, TabularPolicy};

fn dual_solves(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_dual");
    group.sample_size(20);
    for states in [10, 20] {
        let (mdp, ds) = fixture(states, 4, 50, 0);
        let cfg = SemdiceConfig::exact(0.5, mdp.gamma());
        let exact = SolveOptions { tol: 1e-8, ..SolveOptions::default() };
        group.bench_with_input(BenchmarkId::new("exact", states), &states, |b, _| {
            b.iter(|| solve_dual(Some(&mdp), &ds, &cfg, &exact).unwrap())
        });
        let sample = SolveOptions { mode: SolveMode::SampleLHat, ..exact };
        for estimator in [Estimator::Sample, Estimator::Tabular] {
            let cfg = SemdiceConfig { estimator, ..cfg.clone() };
            group.bench_with_input(BenchmarkId::new(format!("sample_{estimator:?}"), states), &states, |b, _| {
                b.iter(|| solve_dual(None, &ds, &cfg, &sample).unwrap())
            });
        }
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let (mdp, _) = fixture(20, 4, 1, 0);
    let opts = FrankWolfeOptions::default();
    c.bench_function("frank_wolfe_sem/20x4", |b| b.iter(|| frank_wolfe_sem(&mdp, &opts).unwrap()));
    let pi = TabularPolicy::uniform(20, 4);
    c.bench_function("stationary_distribution/20x4", |b| b.iter(|| stationary_distribution(&mdp, &pi).unwrap()));
}

fn online_update(c: &mut Criterion) {
    let (mdp, ds) = fixture(20, 4, 100, 0);
    let cfg = SemdiceConfig { gamma: mdp.gamma(), ..online_semdice_defaults() };
    c.bench_function("update_from_buffer/20x4", |b| {
        b.iter(|| {
            let mut state = LearnerState::new(20, 4, &cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            update_from_buffer(&mut state, &ds, &cfg, &mut rng).unwrap()
        })
    });
}

criterion_group!(benches, dual_solves, oracle, online_update);
criterion_main!(benches);
