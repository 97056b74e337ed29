use proptest::prelude::*;

use kneesched_core::evolve::{crossover, fitness, grow_tree, mutate};
use kneesched_core::experiment::{reduction_report, wilcoxon_rank_sum};
use kneesched_core::instgen::{generate_instance, GenSpec};
use kneesched_core::policy::{knee_select, KneeConfig};
use kneesched_core::seeds::rng_from;
use kneesched_core::sim::{sample_durations, sample_pair_duration, solve_with, DurationSource, SimOptions, StepMode};
use kneesched_core::{validate_schedule, DurationTable, ExprTree, PolicyKind, ProjectInstance, RulePair};

fn small_instance(seed: u64, os_index: usize) -> ProjectInstance {
    let os = [0.25, 0.5, 0.75][os_index % 3];
    generate_instance(&GenSpec::standard(os, 2, seed).with_size(10, 2)).unwrap()
}

fn rules(seed: u64, depth: usize) -> RulePair {
    let mut rng = rng_from(seed, &[]);
    RulePair { ordering: Some(grow_tree(&mut rng, depth)), group: Some(grow_tree(&mut rng, depth)) }
}

fn kind() -> impl Strategy<Value = PolicyKind> {
    prop::sample::select(PolicyKind::ALL.to_vec())
}

/// Longest path when every activity takes its shortest possible duration.
fn shortest_critical_path(inst: &ProjectInstance) -> u32 {
    let mut finish = vec![0u32; inst.len()];
    for &i in inst.topological_order() {
        let a = inst.activity(i);
        let start = a.predecessors.iter().map(|&p| finish[p]).max().unwrap_or(0);
        finish[i] = start + a.modes.iter().map(|m| m.min_duration).min().unwrap_or(0);
    }
    finish.into_iter().max().unwrap_or(0)
}

struct Lazy<'a> {
    inst: &'a ProjectInstance,
    seed: u64,
}

impl DurationSource for Lazy<'_> {
    fn reveal(&mut self, activity: usize, mode: usize) -> u32 {
        sample_pair_duration(self.inst, self.seed, activity, mode)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variation_respects_depth(a in any::<u64>(), b in any::<u64>(), s in any::<u64>(), max in 2usize..9) {
        let (p, q) = (rules(a, max), rules(b, max));
        let mut rng = rng_from(s, &[]);
        let (c, d) = crossover(&p, &q, max, &mut rng);
        let m = mutate(&p, 4, max, &mut rng);
        for child in [&c, &d, &m] {
            for t in [&child.ordering, &child.group].into_iter().flatten() {
                prop_assert!(t.is_valid(max));
                let back: ExprTree = t.to_string().parse().unwrap();
                prop_assert_eq!(&back, t);
            }
        }
        let size = |r: &RulePair| r.ordering.as_ref().unwrap().size() + r.group.as_ref().unwrap().size();
        let depth_ok = [&c, &d].iter().all(|r| r.ordering.as_ref().unwrap().depth() < max && r.group.as_ref().unwrap().depth() < max);
        if depth_ok {
            prop_assert_eq!(size(&c) + size(&d), size(&p) + size(&q));
        }
    }

    #[test]
    fn step_modes_agree(seed in 0u64..500, os in 0usize..3, r in any::<u64>(), k in kind()) {
        let inst = small_instance(seed, os);
        let rules = rules(r, 4);
        let policy = k.build(&rules, &KneeConfig::default()).unwrap();
        let table = sample_durations(&inst, r);
        let unit = solve_with(&inst, &policy, &mut &table, SimOptions { step: StepMode::Unit, log_decisions: true }).unwrap();
        let next = solve_with(&inst, &policy, &mut &table, SimOptions::default()).unwrap();
        prop_assert_eq!(&unit.schedule, &next.schedule);
        prop_assert_eq!(unit.decisions.len(), next.decisions.len());
        prop_assert!(validate_schedule(&inst, &next.schedule).unwrap().is_ok());
    }

    #[test]
    fn lazy_reveal_matches_table(seed in 0u64..500, os in 0usize..3, r in any::<u64>(), k in kind()) {
        let inst = small_instance(seed, os);
        let rules = rules(r, 4);
        let policy = k.build(&rules, &KneeConfig::default()).unwrap();
        let table = sample_durations(&inst, r);
        let a = solve_with(&inst, &policy, &mut &table, SimOptions::default()).unwrap();
        let b = solve_with(&inst, &policy, &mut Lazy { inst: &inst, seed: r }, SimOptions::default()).unwrap();
        prop_assert_eq!(a.schedule, b.schedule);
    }

    #[test]
    fn makespan_respects_bounds_and_reduction_bounded(seed in 0u64..500, os in 0usize..3, r in any::<u64>(), k in kind()) {
        let inst = small_instance(seed, os);
        let rules = rules(r, 5);
        let expected = DurationTable::expected(&inst);
        let f = fitness(&rules, k, &KneeConfig::default(), &[(&inst, &expected)]).unwrap();
        prop_assert!(f.fitness >= 0.0);
        let table = sample_durations(&inst, r);
        let policy = k.build(&rules, &KneeConfig::default()).unwrap();
        let res = solve_with(&inst, &policy, &mut &table, SimOptions::default()).unwrap();
        prop_assert!(res.makespan() >= shortest_critical_path(&inst));
        if let Ok(red) = reduction_report(&res.decisions) {
            prop_assert!((0.0..=1.0).contains(&red.reduction));
            if matches!(k, PolicyKind::KggpMax | PolicyKind::KggpAll) {
                prop_assert!((0.0..=1.0).contains(&red.activity_reduction));
            }
        }
    }

    #[test]
    fn knee_select_within_bounds(mut v in prop::collection::vec(-1e6f64..1e6, 1..60), cap in 1usize..80) {
        v.sort_by(f64::total_cmp);
        let k = knee_select(&v, cap);
        prop_assert!(k >= 1 && k <= cap.min(v.len()));
    }

    #[test]
    fn rank_sum_is_antisymmetric(
        a in prop::collection::vec(0u8..20, 2..15),
        b in prop::collection::vec(0u8..20, 2..15),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ab = wilcoxon_rank_sum(&a, &b, 0.05);
        let ba = wilcoxon_rank_sum(&b, &a, 0.05);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        prop_assert_eq!(ab.verdict, ba.verdict.flip());
        prop_assert!((ab.statistic + ba.statistic - (a.len() * b.len()) as f64).abs() < 1e-9);
    }
}
