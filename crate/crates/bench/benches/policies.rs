use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use kneesched_bench::{instance, rules};
use kneesched_core::policy::{full_enumeration_decide, knee_group_decide, KneeConfig};
use kneesched_core::rules::DecisionContext;
use kneesched_core::sim::eligible_set;
use kneesched_core::{sample_durations, solve, PolicyKind};

fn whole_project(c: &mut Criterion) {
    let rules = rules();
    let knee = KneeConfig::default();
    let mut group = c.benchmark_group("solve");
    for n in [30, 100, 200] {
        let inst = instance(n, 0.25, 1);
        let table = sample_durations(&inst, 9);
        for kind in [PolicyKind::Sgp, PolicyKind::KggpMax, PolicyKind::KggpAll] {
            let policy = kind.build(&rules, &knee).unwrap();
            group.bench_with_input(BenchmarkId::new(kind.name(), n), &n, |b, _| {
                b.iter(|| solve(black_box(&inst), &policy, &table).unwrap().makespan())
            });
        }
    }
    group.finish();
}

fn first_decision(c: &mut Criterion) {
    let rules = rules();
    let (ordering, group_rule) = (rules.ordering.as_ref().unwrap(), rules.group.as_ref().unwrap());
    let mut group = c.benchmark_group("first_decision");
    for n in [8, 12] {
        // Low order strength keeps most activities eligible at time zero.
        let inst = instance(n, 0.05, 3);
        let ctx = DecisionContext::initial(&inst);
        let eligible = eligible_set(&inst, &ctx);
        group.bench_with_input(BenchmarkId::new("knee", n), &n, |b, _| {
            b.iter(|| knee_group_decide(ordering, group_rule, &ctx, black_box(&eligible), &KneeConfig::default()))
        });
        group.bench_with_input(BenchmarkId::new("full_enumeration", n), &n, |b, _| {
            b.iter(|| full_enumeration_decide(group_rule, &ctx, black_box(&eligible), u64::MAX).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, whole_project, first_decision);
criterion_main!(benches);
