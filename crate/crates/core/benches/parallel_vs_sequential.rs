use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gph::hierarchy::hierarchy_step;
use gph::inequality::{sample_ratios, RatioKind, SampleSpec};
use gph::nls::random_state;
use gph::{Exec, Grid, HierarchyTruncation, MixtureState};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn mixture(g: &Grid, parts: usize) -> MixtureState {
    MixtureState::from_unnormalized((0..parts).map(|j| (1.0, random_state(g, j as u64, 1.5).unwrap())).collect()).unwrap()
}

fn marginals(c: &mut Criterion) {
    let g = Grid::new(1, 16, 2.0 * PI).unwrap();
    let m = mixture(&g, 4);
    let mut group = c.benchmark_group("mixture_marginal_k3");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| m.marginal(3, exec).unwrap()));
    }
    group.finish();
}

fn hierarchy(c: &mut Criterion) {
    let g = Grid::new(1, 16, 2.0 * PI).unwrap();
    let m = mixture(&g, 3);
    let mut group = c.benchmark_group("hierarchy_step");
    group.sample_size(10);
    for (name, exec) in MODES {
        let t = HierarchyTruncation::from_mixture(&m, 2, 2, 1.0, true, exec).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| hierarchy_step(&t, 1e-3, exec).unwrap()));
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let g = Grid::new(1, 32, 2.0 * PI).unwrap();
    let spec = SampleSpec { q: 2, decay: 2.0, seed: 1, count: 200 };
    let mut group = c.benchmark_group("sample_ratios");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_ratios(&spec, &g, &[0.5, 1.0], RatioKind::Sobolev, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, marginals, hierarchy, sampling);
criterion_main!(benches);
