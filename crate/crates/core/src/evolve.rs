//! Multi-tree genetic programming over rule pairs.
//!
//! Each individual carries the trees its policy uses: an ordering tree for
//! sequential selection, a group tree for full enumeration, both for the
//! knee-point policies. Every generation is evaluated on freshly sampled
//! duration tables shared by the whole population. Generation-best
//! individuals are re-evaluated on a fixed set of tables at the end and the
//! best of those is returned.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ProjectInstance;
use crate::policy::{KneeConfig, PolicyError, PolicyKind};
use crate::rules::{ExprTree, Func, RulePair, TerminalId};
use crate::seeds;
use crate::sim::{sample_durations, solve_with, DurationTable, SimError, SimOptions};

const TAG_INIT: u64 = 1;
const TAG_TABLES: u64 = 2;
const TAG_BREED: u64 = 3;
const TAG_FINAL: u64 = 4;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid GP config: {0}")]
    InvalidConfig(String),
    #[error("no training instances")]
    NoInstances,
    #[error("training instance {0} has a zero lower bound")]
    ZeroLowerBound(usize),
    #[error("training exceeded its time budget after {generations} generation(s)")]
    Timeout { generations: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("simulation failed: {0}")]
    Sim(SimError),
}

impl From<SimError> for EvolveError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Policy(p) => EvolveError::Policy(p),
            other => EvolveError::Sim(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub reproduction_rate: f64,
    pub tournament_size: usize,
    pub init_depth_range: [usize; 2],
    pub max_tree_depth: usize,
    pub seed: u64,
    pub policy: PolicyKind,
    pub knee: KneeConfig,
    /// Tables per training instance in the final re-evaluation.
    pub reeval_realizations: usize,
    /// Wall-clock budget for the whole run.
    pub time_budget_secs: Option<f64>,
    /// Instance files; used by the command line, ignored by [`evolve`].
    pub training_instances: Vec<PathBuf>,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            population_size: 200,
            max_generations: 50,
            crossover_rate: 0.8,
            mutation_rate: 0.15,
            reproduction_rate: 0.05,
            tournament_size: 5,
            init_depth_range: [2, 6],
            max_tree_depth: 8,
            seed: 0,
            policy: PolicyKind::KggpMax,
            knee: KneeConfig::default(),
            reeval_realizations: 5,
            time_budget_secs: None,
            training_instances: Vec::new(),
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        let bad = |m: String| Err(EvolveError::InvalidConfig(m));
        let rates = [self.crossover_rate, self.mutation_rate, self.reproduction_rate];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad(format!("rates must lie in [0, 1], got {rates:?}"));
        }
        if (rates.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("rates must sum to 1, got {}", rates.iter().sum::<f64>()));
        }
        if self.tournament_size < 2 {
            return bad("tournament_size must be at least 2".into());
        }
        if self.population_size < 2 {
            return bad("population_size must be at least 2".into());
        }
        let [lo, hi] = self.init_depth_range;
        if lo > hi || hi > self.max_tree_depth {
            return bad(format!("init_depth_range {lo}..={hi} must be ordered and within max_tree_depth"));
        }
        if self.reeval_realizations == 0 {
            return bad("reeval_realizations must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluatedIndividual {
    pub rules: RulePair,
    pub fitness: f64,
    pub deviations: Vec<f64>,
}

/// Mean relative deviation of the makespan from the critical-path bound
/// over `cases`.
pub fn fitness(
    rules: &RulePair,
    kind: PolicyKind,
    knee: &KneeConfig,
    cases: &[(&ProjectInstance, &DurationTable)],
) -> Result<EvaluatedIndividual, EvolveError> {
    if cases.is_empty() {
        return Err(EvolveError::NoInstances);
    }
    let policy = kind.build(rules, knee)?;
    let mut deviations = Vec::with_capacity(cases.len());
    for (i, (inst, table)) in cases.iter().enumerate() {
        let lb = inst.lower_bound();
        if lb == 0 {
            return Err(EvolveError::ZeroLowerBound(i));
        }
        if !table.matches(inst) {
            return Err(EvolveError::Sim(SimError::TableMismatch));
        }
        let quiet = SimOptions { log_decisions: false, ..SimOptions::default() };
        let result = solve_with(inst, &policy, &mut &**table, quiet)?;
        deviations.push((result.makespan() as f64 - lb as f64) / lb as f64);
    }
    let fitness = deviations.iter().sum::<f64>() / deviations.len() as f64;
    Ok(EvaluatedIndividual { rules: rules.clone(), fitness, deviations })
}

/// `(ordering size, group size)`, 0 for an absent tree.
pub fn rule_size(rules: &RulePair) -> (usize, usize) {
    rules.sizes()
}

fn random_terminal(rng: &mut ChaCha8Rng) -> ExprTree {
    ExprTree::leaf(TerminalId::ALL[rng.random_range(0..TerminalId::ALL.len())])
}

fn random_apply(rng: &mut ChaCha8Rng, child: impl Fn(&mut ChaCha8Rng) -> ExprTree) -> ExprTree {
    let f = Func::ALL[rng.random_range(0..Func::ALL.len())];
    let args = (0..f.arity()).map(|_| child(rng)).collect();
    ExprTree::Apply(f, args)
}

/// Every branch reaches exactly `depth`.
pub fn full_tree(rng: &mut ChaCha8Rng, depth: usize) -> ExprTree {
    if depth == 0 {
        random_terminal(rng)
    } else {
        random_apply(rng, |r| full_tree(r, depth - 1))
    }
}

/// Nodes drawn from functions and terminals alike until `depth` forces a leaf.
pub fn grow_tree(rng: &mut ChaCha8Rng, depth: usize) -> ExprTree {
    let n_func = Func::ALL.len();
    if depth == 0 || rng.random_range(0..n_func + TerminalId::ALL.len()) >= n_func {
        random_terminal(rng)
    } else {
        random_apply(rng, |r| grow_tree(r, depth - 1))
    }
}

/// Cuts every branch at `max_depth`, replacing a function node at the
/// boundary by the leftmost terminal beneath it.
pub fn truncate(tree: ExprTree, max_depth: usize) -> ExprTree {
    match tree {
        ExprTree::Apply(f, args) if max_depth > 0 => {
            ExprTree::Apply(f, args.into_iter().map(|a| truncate(a, max_depth - 1)).collect())
        }
        ExprTree::Apply(_, mut args) => truncate(args.swap_remove(0), 0),
        leaf => leaf,
    }
}

/// Ramped half-and-half: depths cycle through the init range, alternating
/// full and grow.
pub fn initial_population(cfg: &GpConfig, rng: &mut ChaCha8Rng) -> Vec<RulePair> {
    let [lo, hi] = cfg.init_depth_range;
    let span = hi - lo + 1;
    let tree = |rng: &mut ChaCha8Rng, i: usize| {
        let depth = lo + (i / 2) % span;
        if i % 2 == 0 {
            full_tree(rng, depth)
        } else if depth == 0 {
            random_terminal(rng)
        } else {
            random_apply(rng, |r| grow_tree(r, depth - 1))
        }
    };
    (0..cfg.population_size)
        .map(|i| RulePair {
            ordering: cfg.policy.uses_ordering().then(|| tree(rng, i)),
            group: cfg.policy.uses_group().then(|| tree(rng, i)),
        })
        .collect()
}

fn swap_subtrees(a: &mut ExprTree, b: &mut ExprTree, max_depth: usize, rng: &mut ChaCha8Rng) {
    let ia = rng.random_range(0..a.size());
    let ib = rng.random_range(0..b.size());
    let sa = a.subtree(ia).expect("index in range").clone();
    let sb = b.subtree(ib).expect("index in range").clone();
    a.replace(ia, sb);
    b.replace(ib, sa);
    if a.depth() > max_depth {
        *a = truncate(std::mem::replace(a, ExprTree::leaf(TerminalId::Est)), max_depth);
    }
    if b.depth() > max_depth {
        *b = truncate(std::mem::replace(b, ExprTree::leaf(TerminalId::Est)), max_depth);
    }
}

/// Subtree crossover applied independently to each tree type.
pub fn crossover(a: &RulePair, b: &RulePair, max_depth: usize, rng: &mut ChaCha8Rng) -> (RulePair, RulePair) {
    let (mut ca, mut cb) = (a.clone(), b.clone());
    if let (Some(x), Some(y)) = (ca.ordering.as_mut(), cb.ordering.as_mut()) {
        swap_subtrees(x, y, max_depth, rng);
    }
    if let (Some(x), Some(y)) = (ca.group.as_mut(), cb.group.as_mut()) {
        swap_subtrees(x, y, max_depth, rng);
    }
    (ca, cb)
}

fn mutate_tree(tree: &mut ExprTree, grow_depth: usize, max_depth: usize, rng: &mut ChaCha8Rng) {
    let i = rng.random_range(0..tree.size());
    let room = max_depth - tree.node_depth(i).expect("index in range");
    let fresh = grow_tree(rng, grow_depth.min(room));
    tree.replace(i, fresh);
}

/// Subtree mutation: each present tree is mutated with probability 1/2,
/// and at least one is.
pub fn mutate(parent: &RulePair, grow_depth: usize, max_depth: usize, rng: &mut ChaCha8Rng) -> RulePair {
    let mut child = parent.clone();
    let both = child.ordering.is_some() && child.group.is_some();
    let (mut mo, mut mg) = (rng.random_bool(0.5), rng.random_bool(0.5));
    if both && !mo && !mg {
        if rng.random_bool(0.5) {
            mo = true;
        } else {
            mg = true;
        }
    }
    if let Some(t) = child.ordering.as_mut().filter(|_| mo || !both) {
        mutate_tree(t, grow_depth, max_depth, rng);
    }
    if let Some(t) = child.group.as_mut().filter(|_| mg || !both) {
        mutate_tree(t, grow_depth, max_depth, rng);
    }
    child
}

/// Index of the fittest of `k` uniformly drawn individuals (with replacement).
pub fn tournament(fitness: &[f64], k: usize, rng: &mut ChaCha8Rng) -> usize {
    (0..k)
        .map(|_| rng.random_range(0..fitness.len()))
        .min_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)))
        .expect("k >= 1")
}

/// Offspring for the next generation.
pub fn breed(population: &[RulePair], fitness: &[f64], cfg: &GpConfig, rng: &mut ChaCha8Rng) -> Vec<RulePair> {
    let mut next = Vec::with_capacity(population.len());
    while next.len() < population.len() {
        let r: f64 = rng.random();
        let pick = |rng: &mut ChaCha8Rng| &population[tournament(fitness, cfg.tournament_size, rng)];
        if r < cfg.crossover_rate {
            let (a, b) = (pick(rng), pick(rng));
            let (ca, cb) = crossover(a, b, cfg.max_tree_depth, rng);
            next.push(ca);
            if next.len() < population.len() {
                next.push(cb);
            }
        } else if r < cfg.crossover_rate + cfg.mutation_rate {
            let p = pick(rng);
            next.push(mutate(p, cfg.init_depth_range[1], cfg.max_tree_depth, rng));
        } else {
            next.push(pick(rng).clone());
        }
    }
    next
}

/// Tables for generation `generation`, one per instance.
pub fn generation_tables(instances: &[ProjectInstance], seed: u64, generation: usize) -> Vec<DurationTable> {
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| sample_durations(inst, seeds::derive_seed(seed, &[TAG_TABLES, generation as u64, i as u64])))
        .collect()
}

/// Fixed tables for the final re-evaluation, `per_instance` per instance.
pub fn final_tables(instances: &[ProjectInstance], seed: u64, per_instance: usize) -> Vec<(usize, DurationTable)> {
    instances
        .iter()
        .enumerate()
        .flat_map(|(i, inst)| {
            (0..per_instance).map(move |r| {
                (i, sample_durations(inst, seeds::derive_seed(seed, &[TAG_FINAL, i as u64, r as u64])))
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub sigma_size: usize,
    pub gamma_size: usize,
    /// Generation best on the final shared tables.
    pub reeval_fitness: f64,
    #[serde(default)]
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct EvolveOutcome {
    /// Best generation-best under the final tables.
    pub best: EvaluatedIndividual,
    pub generation_bests: Vec<RulePair>,
    pub history: Vec<GenerationStats>,
}

fn evaluate_all(
    population: &[RulePair],
    cfg: &GpConfig,
    cases: &[(&ProjectInstance, &DurationTable)],
) -> Result<Vec<EvaluatedIndividual>, EvolveError> {
    population.par_iter().map(|r| fitness(r, cfg.policy, &cfg.knee, cases)).collect()
}

/// Runs GP on `instances`. Generations evaluated: `max(1, max_generations)`;
/// with zero generations the best of the initial population is returned.
pub fn evolve(cfg: &GpConfig, instances: &[ProjectInstance]) -> Result<EvolveOutcome, EvolveError> {
    cfg.validate()?;
    if instances.is_empty() {
        return Err(EvolveError::NoInstances);
    }
    if let Some(i) = instances.iter().position(|inst| inst.lower_bound() == 0) {
        return Err(EvolveError::ZeroLowerBound(i));
    }
    let started = Instant::now();
    let over_budget = || cfg.time_budget_secs.is_some_and(|b| started.elapsed().as_secs_f64() > b);

    let mut rng = seeds::rng_from(cfg.seed, &[TAG_INIT]);
    let mut population = initial_population(cfg, &mut rng);
    let mut generation_bests = Vec::new();
    let mut history = Vec::new();
    let n_gen = cfg.max_generations.max(1);
    for g in 0..n_gen {
        let t0 = Instant::now();
        let tables = generation_tables(instances, cfg.seed, g);
        let cases: Vec<_> = instances.iter().zip(&tables).collect();
        let evaluated = evaluate_all(&population, cfg, &cases)?;
        let fit: Vec<f64> = evaluated.iter().map(|e| e.fitness).collect();
        let best = (0..fit.len()).min_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b))).expect("non-empty");
        let (sigma_size, gamma_size) = rule_size(&population[best]);
        history.push(GenerationStats {
            generation: g,
            best_fitness: fit[best],
            mean_fitness: fit.iter().sum::<f64>() / fit.len() as f64,
            sigma_size,
            gamma_size,
            reeval_fitness: f64::NAN,
            wall_seconds: 0.0,
        });
        generation_bests.push(population[best].clone());
        log::debug!("generation {g}: best {:.5} mean {:.5}", fit[best], history[g].mean_fitness);
        if g + 1 < n_gen {
            let mut brng = seeds::rng_from(cfg.seed, &[TAG_BREED, g as u64]);
            population = breed(&population, &fit, cfg, &mut brng);
        }
        history[g].wall_seconds = t0.elapsed().as_secs_f64();
        if over_budget() {
            return Err(EvolveError::Timeout { generations: g + 1 });
        }
    }

    let finals = final_tables(instances, cfg.seed, cfg.reeval_realizations);
    let cases: Vec<_> = finals.iter().map(|(i, t)| (&instances[*i], t)).collect();
    let reeval = evaluate_all(&generation_bests, cfg, &cases)?;
    for (h, e) in history.iter_mut().zip(&reeval) {
        h.reeval_fitness = e.fitness;
    }
    let best = reeval
        .into_iter()
        .enumerate()
        .min_by(|(a, x), (b, y)| x.fitness.total_cmp(&y.fitness).then(a.cmp(b)))
        .map(|(_, e)| e)
        .expect("at least one generation");
    Ok(EvolveOutcome { best, generation_bests, history })
}

/// History CSV. Wall-clock timings are optional so that reruns can be
/// compared byte for byte.
pub fn write_history(history: &[GenerationStats], out: impl Write, with_timing: bool) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["generation", "best_fitness", "mean_fitness", "sigma_size", "gamma_size", "reeval_fitness"];
    if with_timing {
        header.push("wall_seconds");
    }
    w.write_record(&header)?;
    for h in history {
        let mut row = vec![
            h.generation.to_string(),
            h.best_fitness.to_string(),
            h.mean_fitness.to_string(),
            h.sigma_size.to_string(),
            h.gamma_size.to_string(),
            h.reeval_fitness.to_string(),
        ];
        if with_timing {
            row.push(format!("{:.6}", h.wall_seconds));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
