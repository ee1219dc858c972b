use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use date_bench::{fixture_config, train_part};
use date_core::fixtures::greedy_trap_instance;
use date_core::mds::{run_mds, MdsConfig, MdsInput};
use date_core::tree::{split_candidates, train};
use date_core::{discover, run_pipeline, ModelId, TreeHyper};

fn trees(c: &mut Criterion) {
    let t = train_part(&fixture_config("mixture2", 1));
    let mut g = c.benchmark_group("tree");
    for depth in [2, 8] {
        let hyper = TreeHyper { max_depth: depth, ..Default::default() };
        g.bench_with_input(BenchmarkId::new("train", depth), &hyper, |b, h| b.iter(|| train(&t, h, ModelId(0)).unwrap()));
    }
    g.bench_function("split_candidates", |b| b.iter(|| split_candidates(&t, 16).unwrap()));
    g.finish();
}

fn discovery(c: &mut Criterion) {
    let mut g = c.benchmark_group("discover");
    for name in ["mixture2", "duplicate_markers"] {
        let mut cfg = fixture_config(name, 1);
        cfg.discovery.hyper.max_depth = 2;
        let t = train_part(&cfg);
        g.bench_function(name, |b| b.iter(|| discover(&t, &cfg.discovery).unwrap()));
    }
    g.finish();
}

fn selection(c: &mut Criterion) {
    let trap = greedy_trap_instance(0).unwrap();
    let input = MdsInput {
        arms: &trap.arms,
        context: &trap.context,
        train: &trap.train,
        val: &trap.val,
        hyper: trap.hyper,
        rho_global: trap.rho,
    };
    c.bench_function("mds/greedy_trap", |b| b.iter(|| run_mds(&input, &MdsConfig::default()).unwrap()));
}

fn end_to_end(c: &mut Criterion) {
    let cfg = fixture_config("piecewise", 9);
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("piecewise", |b| b.iter(|| run_pipeline(&cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, trees, discovery, selection, end_to_end);
criterion_main!(benches);
