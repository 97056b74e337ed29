//! Acceptance gate. Each test prints one `PASS`/`FAIL` line and then asserts.
//!
//! Run with `cargo test -p kneesched-core --test acceptance -- --test-threads 1`
//! for undisturbed timings.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use kneesched_core::bitset::BitSet;
use kneesched_core::evolve::{fitness, grow_tree, GpConfig};
use kneesched_core::experiment::{
    emit_plot_data, load_results, reduction_report, run_dir, run_experiment, summarize, summary_table, write_summary,
    evaluate_rules, Experiment, RunStatus, Scenario,
};
use kneesched_core::fixtures;
use kneesched_core::instgen::{generate_instance, order_strength, GenSpec};
use kneesched_core::model::{ActivityRecord, Metadata, Mode, ResourceVector};
use kneesched_core::policy::{
    enumeration_count, full_enumeration_decide, knee_group_decide, knee_index, knee_select, KneeConfig,
};
use kneesched_core::rules::{eval_group_priority, DecisionContext, RunningActivity, TerminalMask};
use kneesched_core::seeds::rng_from;
use kneesched_core::sim::{eligible_set, sample_durations};
use kneesched_core::{solve, validate_schedule, DurationTable, Pair, PolicyKind, ProjectInstance, RulePair};

fn verdict(id: u32, name: &str, pass: bool, elapsed: Duration, limit: Option<Duration>, detail: String) {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let ok = pass && in_time;
    let budget = limit.map(|l| format!(" / {:.0?}", l)).unwrap_or_default();
    let line = format!(
        "{} C{id:02} {name:<32} {detail} [{:.2?}{budget}]\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed
    );
    // Written past the test harness's capture so the line always shows.
    let _ = std::io::stdout().write_all(line.as_bytes());
    assert!(pass, "C{id:02} {name}: {detail}");
    assert!(in_time, "C{id:02} {name}: exceeded {limit:?} ({elapsed:?})");
}

fn random_rules(kind: PolicyKind, rng: &mut ChaCha8Rng) -> RulePair {
    let depth = rng.random_range(1..=6);
    let tree = |rng: &mut ChaCha8Rng| grow_tree(rng, depth);
    RulePair {
        ordering: kind.uses_ordering().then(|| tree(rng)),
        group: kind.uses_group().then(|| tree(rng)),
    }
}

/// Starts every pair whose planned start equals the current clock.
fn scripted(plan: Vec<(usize, usize, u32)>) -> impl Fn(&DecisionContext, &[Pair]) -> Vec<Pair> {
    move |ctx, eligible| {
        plan.iter()
            .filter(|&&(_, _, t)| t == ctx.clock())
            .map(|&(a, m, _)| Pair::new(a, m))
            .filter(|p| eligible.contains(p))
            .collect()
    }
}

#[test]
fn c01_golden_example() {
    let t = Instant::now();
    let inst = fixtures::example_project();
    let table = DurationTable::expected(&inst);
    let seq = scripted(vec![(1, 0, 0), (2, 0, 5), (3, 0, 9), (4, 0, 13), (5, 0, 17)]);
    let grp = scripted(vec![(1, 1, 0), (2, 1, 0), (3, 0, 7), (4, 1, 11), (5, 1, 11)]);
    let a = solve(&inst, &seq, &table).unwrap();
    let b = solve(&inst, &grp, &table).unwrap();
    let va = validate_schedule(&inst, &a.schedule).unwrap().is_ok();
    let vb = validate_schedule(&inst, &b.schedule).unwrap().is_ok();
    let pass = a.makespan() == 20 && b.makespan() == 17 && va && vb;
    verdict(
        1,
        "golden example makespans",
        pass,
        t.elapsed(),
        Some(Duration::from_secs(1)),
        format!("sequential={} (valid {va}), group={} (valid {vb}); expected 20 and 17", a.makespan(), b.makespan()),
    );
}

/// `n` independent activities with `m` identical modes each and ample capacity.
fn independent(n: usize, m: usize) -> ProjectInstance {
    let mut recs = vec![ActivityRecord { id: 0, predecessors: vec![], modes: vec![Mode::dummy(1)] }];
    for i in 1..=n {
        let modes = (0..m).map(|k| Mode::new(2 + k as u32, 1, 5, vec![1])).collect();
        recs.push(ActivityRecord { id: i, predecessors: vec![0], modes });
    }
    recs.push(ActivityRecord { id: n + 1, predecessors: (1..=n).collect(), modes: vec![Mode::dummy(1)] });
    ProjectInstance::new(recs, ResourceVector(vec![100]), Metadata { n_resources: 1, ..Default::default() }).unwrap()
}

#[test]
fn c02_enumeration_count_law() {
    let t = Instant::now();
    let rule: kneesched_core::ExprTree = "(add ExpDur RR)".parse().unwrap();
    let mut checked = 0;
    let mut bad = Vec::new();
    let mut run = |n: usize, m: usize| {
        let inst = independent(n, m);
        let ctx = DecisionContext::initial(&inst);
        let eligible = eligible_set(&inst, &ctx);
        let got = full_enumeration_decide(&rule, &ctx, &eligible, u64::MAX).unwrap().candidates;
        let want = (m as u64 + 1).pow(n as u32) - 1;
        if got != want || enumeration_count(&eligible) != want as u128 {
            bad.push((n, m, got, want));
        }
        checked += 1;
        got
    };
    for n in 1..=8 {
        for m in 1..=3 {
            run(n, m);
        }
    }
    let big = run(12, 2);
    verdict(
        2,
        "enumeration count law",
        bad.is_empty() && big == 531_440,
        t.elapsed(),
        Some(Duration::from_secs(10)),
        format!("{checked} (n, m) cases, mismatches {bad:?}, n=12 m=2 -> {big}"),
    );
}

/// Farthest point from the chord of the normalized curve, by the general
/// point-to-line distance; first index on ties.
fn knee_oracle(p: &[f64]) -> usize {
    let n = p.len();
    let (x0, y0, x1, y1) = (0.0, 0.0, 1.0, 1.0);
    let norm = |k: usize| ((k as f64) / (n - 1) as f64, (p[k] - p[0]) / (p[n - 1] - p[0]));
    let len = ((x1 - x0) * (x1 - x0) + (y1 - y0) * (y1 - y0) as f64).sqrt();
    let dist = |k: usize| {
        let (x, y) = norm(k);
        ((y1 - y0) * x - (x1 - x0) * y + x1 * y0 - y1 * x0).abs() / len
    };
    let mut best = 0;
    for k in 1..n {
        if dist(k) > dist(best) {
            best = k;
        }
    }
    best
}

#[test]
fn c03_knee_oracle() {
    let t = Instant::now();
    let mut rng = rng_from(3, &[]);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(3..=50);
        let mut v = rng.random_range(-100.0..100.0);
        let curve: Vec<f64> = (0..n)
            .map(|_| {
                v += rng.random_range(1e-3..10.0) * if rng.random_bool(0.3) { 10.0 } else { 1.0 };
                v
            })
            .collect();
        let want = knee_oracle(&curve);
        if knee_index(&curve) != Some(want) || knee_select(&curve, usize::MAX) != want + 1 {
            mismatches += 1;
        }
    }
    verdict(
        3,
        "knee oracle equivalence",
        mismatches == 0,
        t.elapsed(),
        Some(Duration::from_secs(30)),
        format!("10000 curves, {mismatches} mismatches"),
    );
}

#[test]
fn c04_policy_oracle_equivalence() {
    let t = Instant::now();
    let mut rng = rng_from(4, &[]);
    let cfg = KneeConfig { use_knee: false, retain_maximal_only: false, cap: usize::MAX, group_limit: u64::MAX };
    let mut mismatches = 0;
    let mut nonempty = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let n_res = rng.random_range(1..=3);
        let cap: Vec<u32> = (0..n_res).map(|_| rng.random_range(4..=12)).collect();
        let mut recs = vec![ActivityRecord { id: 0, predecessors: vec![], modes: vec![Mode::dummy(n_res)] }];
        for i in 1..=n {
            let d = rng.random_range(1..=10);
            let demand = cap.iter().map(|&c| rng.random_range(0..=c.min(6))).collect();
            recs.push(ActivityRecord { id: i, predecessors: vec![0], modes: vec![Mode::new(d, d, d, demand)] });
        }
        recs.push(ActivityRecord { id: n + 1, predecessors: (1..=n).collect(), modes: vec![Mode::dummy(n_res)] });
        let meta = Metadata { n_resources: n_res, ..Default::default() };
        let inst = ProjectInstance::new(recs, ResourceVector(cap), meta).unwrap();
        let rules = random_rules(PolicyKind::KggpAll, &mut rng);
        let (o, g) = (rules.ordering.as_ref().unwrap(), rules.group.as_ref().unwrap());
        let ctx = DecisionContext::initial(&inst);
        let eligible = eligible_set(&inst, &ctx);
        assert!(eligible.len() <= 6);
        let knee = knee_group_decide(o, g, &ctx, &eligible, &cfg);
        let full = full_enumeration_decide(g, &ctx, &eligible, u64::MAX).unwrap();
        let score = |grp: &[Pair]| if grp.is_empty() { None } else { Some(eval_group_priority(g, &ctx, grp)) };
        if score(&knee.group) != score(&full.group) {
            mismatches += 1;
        }
        nonempty += usize::from(!full.group.is_empty());
    }
    verdict(
        4,
        "policy/oracle equivalence",
        mismatches == 0,
        t.elapsed(),
        Some(Duration::from_secs(60)),
        format!("200 instances ({nonempty} with a feasible group), {mismatches} score mismatches"),
    );
}

#[test]
fn c05_feasibility_suite() {
    let t = Instant::now();
    let knee = KneeConfig { group_limit: u64::MAX, ..Default::default() };
    let mut failures = Vec::new();
    let mut schedules = 0;
    let mut min_fit = f64::INFINITY;
    for i in 0..100u64 {
        let os = [0.25, 0.5, 0.75][(i % 3) as usize];
        let r = [4, 8, 12][(i / 3 % 3) as usize];
        let inst = generate_instance(&GenSpec::standard(os, r, 500 + i).with_size(30, 3)).unwrap();
        let table = sample_durations(&inst, i);
        let mut rng = rng_from(5, &[i]);
        for kind in PolicyKind::ALL {
            let rules = random_rules(kind, &mut rng);
            let policy = kind.build(&rules, &knee).unwrap();
            match solve(&inst, &policy, &table) {
                Ok(res) => {
                    schedules += 1;
                    if !validate_schedule(&inst, &res.schedule).unwrap().is_ok() {
                        failures.push(format!("instance {i} {kind}: invalid schedule"));
                    }
                }
                Err(e) => failures.push(format!("instance {i} {kind}: {e}")),
            }
            let f = fitness(&rules, kind, &knee, &[(&inst, &table)]).unwrap().fitness;
            min_fit = min_fit.min(f);
            if !(f >= 0.0) {
                failures.push(format!("instance {i} {kind}: fitness {f}"));
            }
        }
    }
    verdict(
        5,
        "feasibility suite",
        failures.is_empty(),
        t.elapsed(),
        Some(Duration::from_secs(300)),
        format!("{schedules}/400 schedules valid, min fitness {min_fit:.4}, failures {failures:?}"),
    );
}

#[test]
fn c06_generator_fidelity() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut problems = Vec::new();
    for os in [0.25, 0.5, 0.75] {
        for seed in 0..30 {
            let inst = generate_instance(&GenSpec::standard(os, 4, seed)).unwrap();
            let achieved = order_strength(&inst);
            worst = worst.max((achieved - os).abs());
            if (achieved - os).abs() > 0.02 + 1e-12 {
                problems.push(format!("os {os} seed {seed}: {achieved}"));
            }
            for id in inst.real_ids() {
                for m in &inst.activity(id).modes {
                    if !m.demand.iter().all(|d| (1..=6).contains(&d)) {
                        problems.push(format!("os {os} seed {seed}: demand {:?}", m.demand));
                    }
                    if !(m.min_duration <= m.expected_duration && m.expected_duration <= m.max_duration) {
                        problems.push(format!("os {os} seed {seed}: durations {m:?}"));
                    }
                }
            }
        }
    }
    verdict(
        6,
        "generator fidelity",
        problems.is_empty(),
        t.elapsed(),
        Some(Duration::from_secs(120)),
        format!("90 instances of 200 activities, worst |OS - target| {worst:.4} (tol 0.02), {} problems", problems.len()),
    );
}

#[test]
fn c07_knee_reduction() {
    let t = Instant::now();
    let insts: Vec<ProjectInstance> =
        (0..5).map(|s| generate_instance(&GenSpec::standard(0.25, 8, 700 + s).with_size(100, 3)).unwrap()).collect();
    let mut rng = rng_from(7, &[]);
    let mut pair_red = Vec::new();
    let mut act_red = Vec::new();
    let (mut elig, mut filt) = (0.0, 0.0);
    for k in 0..50 {
        let rules = random_rules(PolicyKind::KggpMax, &mut rng);
        let e = evaluate_rules(&rules, PolicyKind::KggpMax, &KneeConfig::default(), &insts, k, 1).unwrap();
        let r = reduction_report(&e.decisions).unwrap();
        pair_red.push(r.reduction);
        act_red.push(r.activity_reduction);
        elig += r.mean_eligible / 50.0;
        filt += r.mean_filtered / 50.0;
    }
    let mean = pair_red.iter().sum::<f64>() / 50.0;
    let mean_act = act_red.iter().sum::<f64>() / 50.0;
    verdict(
        7,
        "knee reduction plausibility",
        (0.30..=0.70).contains(&mean),
        t.elapsed(),
        Some(Duration::from_secs(600)),
        format!(
            "mean reduction {:.1}% of eligible pairs (band 30-70%); eligible {elig:.2}, filtered {filt:.2}; per distinct activity {:.1}%",
            100.0 * mean,
            100.0 * mean_act
        ),
    );
}

fn desk_experiment(runs: usize) -> Experiment {
    let scenario = |os: f64, seed: u64| Scenario {
        name: format!("{os}/R4"),
        generator: GenSpec::standard(os, 4, 0).with_size(30, 3),
        train_instances: 5,
        test_instances: 10,
        train_seed: seed,
        test_seed: seed + 1000,
        gp_overrides: BTreeMap::new(),
    };
    Experiment {
        name: "desk".into(),
        seed: 2024,
        scenarios: vec![scenario(0.75, 100), scenario(0.5, 200)],
        algorithms: vec![PolicyKind::Sgp, PolicyKind::KggpMax],
        runs,
        gp: GpConfig { population_size: 50, max_generations: 20, ..Default::default() },
        gp_overrides: BTreeMap::new(),
        test_realizations: 30,
    }
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn c08_desk_scale_run() {
    let t = Instant::now();
    let exp = desk_experiment(10);
    let dir = fresh_dir("desk_run");
    run_experiment(&exp, Some(&dir), workers()).unwrap();
    let (exp, results) = load_results(&dir).unwrap();
    let rows = summarize(&exp, &results, 0.05);
    write_summary(&dir, &exp, &rows).unwrap();
    let plots = emit_plot_data(&dir).unwrap();

    let mut problems = Vec::new();
    for r in &results {
        let id = format!("{} {} run {}", r.report.scenario, r.report.algorithm, r.report.run);
        if r.report.status != RunStatus::Completed {
            problems.push(format!("{id}: {:?}", r.report.status));
            continue;
        }
        let (first, last) = (&r.history[0], r.history.last().unwrap());
        if r.history.len() != 20 || last.reeval_fitness > first.reeval_fitness {
            problems.push(format!("{id}: gen0 {} -> final {}", first.reeval_fitness, last.reeval_fitness));
        }
    }

    // Same seeds, one run per cell, fresh directory: files must match byte for byte.
    let again = fresh_dir("desk_run_again");
    run_experiment(&desk_experiment(1), Some(&again), workers()).unwrap();
    for sc in &exp.scenarios {
        for &alg in &exp.algorithms {
            for f in ["report.json", "history.csv", "best.rules"] {
                let a = fs::read(run_dir(&dir, &sc.name, alg, 0).join(f)).unwrap();
                let b = fs::read(run_dir(&again, &sc.name, alg, 0).join(f)).unwrap();
                if a != b {
                    problems.push(format!("{} {alg} {f} differs on rerun", sc.name));
                }
            }
        }
    }

    let table = summary_table(&exp, &rows);
    let direction: Vec<String> = rows
        .iter()
        .filter(|r| r.algorithm == PolicyKind::KggpMax)
        .map(|r| {
            let sgp = rows.iter().find(|s| s.scenario == r.scenario && s.algorithm == PolicyKind::Sgp).unwrap();
            format!(
                "{}: kggp-max {:.4} vs sgp {:.4} ({:?}, p={:.3})",
                r.scenario,
                r.mean.unwrap_or(f64::NAN),
                sgp.mean.unwrap_or(f64::NAN),
                r.verdict,
                r.p_value.unwrap_or(f64::NAN)
            )
        })
        .collect();
    let _ = std::io::stdout().write_all(format!("{table}").as_bytes());
    verdict(
        8,
        "desk-scale methodology run",
        problems.is_empty() && plots.len() == 6,
        t.elapsed(),
        None,
        format!(
            "{} runs, {} plot files, outputs in {}; {}; problems {problems:?}",
            results.len(),
            plots.len(),
            dir.display(),
            direction.join("; ")
        ),
    );
}

fn tree_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timing.json" && p.file_name().unwrap() != "runtime.csv" {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn c09_determinism() {
    let t = Instant::now();
    let mut exp = desk_experiment(3);
    exp.gp.population_size = 20;
    exp.gp.max_generations = 5;
    exp.test_realizations = 5;
    exp.algorithms.push(PolicyKind::KggpAll);
    let (a, b) = (fresh_dir("determinism_a"), fresh_dir("determinism_b"));
    for (dir, w) in [(&a, 1), (&b, workers().max(2))] {
        run_experiment(&exp, Some(dir), w).unwrap();
        let (e, results) = load_results(dir).unwrap();
        write_summary(dir, &e, &summarize(&e, &results, 0.05)).unwrap();
        emit_plot_data(dir).unwrap();
    }
    let (fa, fb) = (tree_files(&a), tree_files(&b));
    let differing: Vec<_> = fa.iter().filter(|(k, v)| fb.get(*k) != Some(*v)).map(|(k, _)| k.clone()).collect();
    verdict(
        9,
        "determinism",
        fa.len() == fb.len() && differing.is_empty(),
        t.elapsed(),
        None,
        format!("{} files compared (1 vs {} workers), {} differ", fa.len(), workers().max(2), differing.len()),
    );
}

/// A random mid-execution state: a precedence-closed completed set, some
/// running activities that fit, and a clock at or after their starts.
fn random_state<'a>(inst: &'a ProjectInstance, rng: &mut ChaCha8Rng, shift: u32) -> (DecisionContext<'a>, DecisionContext<'a>) {
    let mut completed = BitSet::new(inst.len());
    completed.insert(inst.start_id());
    let p_done = rng.random_range(0.0..0.8);
    for &i in inst.topological_order() {
        if !inst.is_dummy(i)
            && inst.activity(i).predecessors.iter().all(|&p| completed.contains(p))
            && rng.random_bool(p_done)
        {
            completed.insert(i);
        }
    }
    let clock = rng.random_range(0..40u32);
    let mut avail = inst.capacities().0.clone();
    let mut running = Vec::new();
    for i in inst.real_ids() {
        if completed.contains(i) || !inst.activity(i).predecessors.iter().all(|&p| completed.contains(p)) {
            continue;
        }
        if rng.random_bool(0.4) {
            let m = rng.random_range(0..inst.activity(i).modes.len());
            let d = &inst.mode(i, m).demand;
            if d.iter().zip(&avail).all(|(x, a)| x <= *a) {
                avail.iter_mut().zip(d.iter()).for_each(|(a, x)| *a -= x);
                let start = clock - rng.random_range(0..=clock.min(12));
                running.push(RunningActivity { activity: i, mode: m, start });
            }
        }
    }
    let shifted: Vec<RunningActivity> =
        running.iter().map(|r| RunningActivity { start: r.start + shift, ..*r }).collect();
    let a = DecisionContext::new(inst, clock, ResourceVector(avail.clone()), completed.clone(), running);
    let b = DecisionContext::new(inst, clock + shift, ResourceVector(avail), completed, shifted);
    (a, b)
}

#[test]
fn c10_time_invariance() {
    let t = Instant::now();
    let insts: Vec<ProjectInstance> = (0..10)
        .map(|s| generate_instance(&GenSpec::standard([0.25, 0.5, 0.75][s % 3], 3, s as u64).with_size(15, 3)).unwrap())
        .collect();
    let mut rng = rng_from(10, &[]);
    let mut compared = 0usize;
    let mut differing = 0usize;
    for k in 0..1000 {
        let inst = &insts[k % insts.len()];
        let shift = rng.random_range(1..10_000);
        let (a, b) = random_state(inst, &mut rng, shift);
        let candidates: Vec<Pair> = inst
            .real_ids()
            .filter(|&i| !a.is_started(i) && inst.activity(i).predecessors.iter().all(|&p| a.completed().contains(p)))
            .flat_map(|i| (0..inst.activity(i).modes.len()).map(move |m| Pair::new(i, m)))
            .collect();
        let mut groups: Vec<Vec<Pair>> = candidates.iter().map(|&p| vec![p]).collect();
        for _ in 0..3 {
            let g: Vec<Pair> = candidates.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
            let mut seen = BitSet::new(inst.len());
            let g: Vec<Pair> = g.into_iter().filter(|p| !seen.contains(p.activity) && { seen.insert(p.activity); true }).collect();
            if !g.is_empty() {
                groups.push(g);
            }
        }
        for g in &groups {
            let (va, vb) = (a.group_values(g, TerminalMask::all()), b.group_values(g, TerminalMask::all()));
            compared += 24;
            differing += va.0.iter().zip(&vb.0).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
        }
    }
    verdict(
        10,
        "terminal time invariance",
        differing == 0 && compared > 0,
        t.elapsed(),
        Some(Duration::from_secs(10)),
        format!("1000 states, {compared} terminal values compared, {differing} differ"),
    );
}
