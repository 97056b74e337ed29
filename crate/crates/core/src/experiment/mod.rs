//! Experiment orchestration: scenarios, training runs, held-out test
//! evaluation, run reports, summary statistics and plot data.
//!
//! Output layout under the output directory:
//!
//! ```text
//! experiment.json
//! instances/<scenario>/test_<seed>.json
//! runs/<scenario>/<algorithm>/run<NNN>/{report.json, history.csv, best.rules, timing.json}
//! ```
//!
//! `report.json`, `history.csv` and `best.rules` are deterministic in the
//! experiment seed; wall-clock measurements live only in `timing.json`.

mod report;
pub mod stats;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolve::{evolve, write_history, EvolveError, GpConfig};
use crate::instgen::{generate_instance, GenError, GenSpec};
use crate::model::ProjectInstance;
use crate::policy::{KneeConfig, PolicyKind};
use crate::rules::RulePair;
use crate::seeds;
use crate::sim::{sample_durations, solve_with, DecisionRecord, SimOptions};

pub use report::{
    emit_plot_data, load_results, reduction_report, summarize, summary_table, write_summary, ReductionStats, RunResult, SummaryRow,
};
pub use stats::{mean_std, wilcoxon_rank_sum, RankSumResult, Verdict};

const TAG_RUN: u64 = 11;
const TAG_TEST: u64 = 12;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error("decision log is empty")]
    EmptyLog,
    #[error("no run reports under {0}")]
    NoReports(PathBuf),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// Per-algorithm changes to the base GP config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpOverrides {
    pub population_size: Option<usize>,
    pub max_generations: Option<usize>,
    pub knee: Option<KneeConfig>,
    pub time_budget_secs: Option<f64>,
}

impl GpOverrides {
    fn apply(&self, cfg: &mut GpConfig) {
        if let Some(p) = self.population_size {
            cfg.population_size = p;
        }
        if let Some(g) = self.max_generations {
            cfg.max_generations = g;
        }
        if let Some(k) = &self.knee {
            cfg.knee = k.clone();
        }
        if let Some(t) = self.time_budget_secs {
            cfg.time_budget_secs = Some(t);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// E.g. `0.5/R12`.
    pub name: String,
    /// Generator settings; the seed field is replaced per instance.
    pub generator: GenSpec,
    pub train_instances: usize,
    pub test_instances: usize,
    /// Training instance `i` uses generator seed `train_seed + i`.
    pub train_seed: u64,
    pub test_seed: u64,
    #[serde(default)]
    pub gp_overrides: BTreeMap<PolicyKind, GpOverrides>,
}

impl Scenario {
    pub fn training_set(&self) -> Result<Vec<ProjectInstance>, GenError> {
        instance_set(&self.generator, self.train_seed, self.train_instances)
    }

    pub fn test_set(&self) -> Result<Vec<ProjectInstance>, GenError> {
        instance_set(&self.generator, self.test_seed, self.test_instances)
    }
}

/// Instances for seeds `seed..seed + count`.
pub fn instance_set(spec: &GenSpec, seed: u64, count: usize) -> Result<Vec<ProjectInstance>, GenError> {
    (0..count as u64).into_par_iter().map(|i| generate_instance(&spec.clone().with_seed(seed + i))).collect()
}

fn default_test_realizations() -> usize {
    30
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
    pub algorithms: Vec<PolicyKind>,
    pub runs: usize,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub gp_overrides: BTreeMap<PolicyKind, GpOverrides>,
    #[serde(default = "default_test_realizations")]
    pub test_realizations: usize,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| ExperimentError::Json { path: path.to_path_buf(), source })
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Invalid(m));
        let mut names = HashSet::new();
        for s in &self.scenarios {
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate scenario name `{}`", s.name));
            }
            if s.train_instances == 0 || s.test_instances == 0 {
                return bad(format!("scenario `{}` needs training and test instances", s.name));
            }
            s.generator.validate()?;
        }
        let slugs: HashSet<String> = self.scenarios.iter().map(|s| slug(&s.name)).collect();
        if slugs.len() != self.scenarios.len() {
            return bad("scenario names collide after path sanitising".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms".into());
        }
        if self.algorithms.iter().collect::<HashSet<_>>().len() != self.algorithms.len() {
            return bad("duplicate algorithm".into());
        }
        if self.runs == 0 || self.test_realizations == 0 {
            return bad("runs and test_realizations must be positive".into());
        }
        self.gp.validate()?;
        Ok(())
    }

    /// GP config for one run. Runs with the same index share a seed across
    /// algorithms.
    pub fn run_config(&self, scenario: usize, algorithm: PolicyKind, run: usize) -> GpConfig {
        let mut cfg = self.gp.clone();
        cfg.policy = algorithm;
        cfg.seed = self.run_seed(scenario, run);
        cfg.training_instances.clear();
        if let Some(o) = self.gp_overrides.get(&algorithm) {
            o.apply(&mut cfg);
        }
        if let Some(o) = self.scenarios[scenario].gp_overrides.get(&algorithm) {
            o.apply(&mut cfg);
        }
        cfg
    }

    pub fn run_seed(&self, scenario: usize, run: usize) -> u64 {
        seeds::derive_seed(self.seed, &[TAG_RUN, scenario as u64, run as u64])
    }

    /// Base seed of the test realizations of one scenario, shared by all runs.
    pub fn test_seed(&self, scenario: usize) -> u64 {
        seeds::derive_seed(self.seed, &[TAG_TEST, scenario as u64])
    }
}

/// Filesystem-safe form of a scenario name.
pub fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    TimedOut,
    Overflow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub algorithm: PolicyKind,
    pub run: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub n_activities: usize,
    pub generations_completed: usize,
    pub best_rules: Option<String>,
    pub sigma_size: Option<usize>,
    pub gamma_size: Option<usize>,
    /// Best rule on the final training re-evaluation tables.
    pub train_fitness: Option<f64>,
    /// Mean deviation over test instances and realizations.
    pub test_objective: Option<f64>,
    pub test_seed: u64,
    pub test_realizations: usize,
    pub reduction: Option<ReductionStats>,
    pub message: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_seconds: f64,
    pub test_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestEvaluation {
    pub objective: f64,
    pub deviations: Vec<f64>,
    pub decisions: Vec<DecisionRecord>,
}

/// Evaluates `rules` on every instance under `realizations` duration tables
/// each; table `r` of instance `j` is drawn from `derive_seed(seed, [j, r])`.
pub fn evaluate_rules(
    rules: &RulePair,
    kind: PolicyKind,
    knee: &KneeConfig,
    instances: &[ProjectInstance],
    seed: u64,
    realizations: usize,
) -> Result<TestEvaluation, EvolveError> {
    let policy = kind.build(rules, knee)?;
    let cases: Vec<(usize, usize)> = (0..instances.len()).flat_map(|j| (0..realizations).map(move |r| (j, r))).collect();
    let results: Vec<(f64, Vec<DecisionRecord>)> = cases
        .par_iter()
        .map(|&(j, r)| {
            let inst = &instances[j];
            let lb = inst.lower_bound();
            if lb == 0 {
                return Err(EvolveError::ZeroLowerBound(j));
            }
            let table = sample_durations(inst, seeds::derive_seed(seed, &[j as u64, r as u64]));
            let res = solve_with(inst, &policy, &mut &table, SimOptions::default())?;
            Ok(((res.makespan() as f64 - lb as f64) / lb as f64, res.decisions))
        })
        .collect::<Result<_, _>>()?;
    if results.is_empty() {
        return Err(EvolveError::NoInstances);
    }
    let deviations: Vec<f64> = results.iter().map(|(d, _)| *d).collect();
    let objective = deviations.iter().sum::<f64>() / deviations.len() as f64;
    let decisions = results.into_iter().flat_map(|(_, d)| d).collect();
    Ok(TestEvaluation { objective, deviations, decisions })
}

/// Everything produced by one training run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub history: Vec<crate::evolve::GenerationStats>,
    pub timing: Timing,
}

fn run_one(
    exp: &Experiment,
    sc: usize,
    algorithm: PolicyKind,
    run: usize,
    train: &[ProjectInstance],
    test: &[ProjectInstance],
) -> Result<RunOutput, ExperimentError> {
    let scenario = &exp.scenarios[sc];
    let cfg = exp.run_config(sc, algorithm, run);
    let mut report = RunReport {
        scenario: scenario.name.clone(),
        algorithm,
        run,
        seed: cfg.seed,
        status: RunStatus::Completed,
        n_activities: scenario.generator.n_activities,
        generations_completed: 0,
        best_rules: None,
        sigma_size: None,
        gamma_size: None,
        train_fitness: None,
        test_objective: None,
        test_seed: exp.test_seed(sc),
        test_realizations: exp.test_realizations,
        reduction: None,
        message: None,
    };
    let mut timing = Timing::default();
    let t0 = Instant::now();
    let outcome = evolve(&cfg, train);
    timing.train_seconds = t0.elapsed().as_secs_f64();
    let outcome = match outcome {
        Ok(o) => o,
        Err(EvolveError::Timeout { generations }) => {
            report.status = RunStatus::TimedOut;
            report.generations_completed = generations;
            report.message = Some(format!("time budget exhausted after {generations} generation(s)"));
            return Ok(RunOutput { report, history: Vec::new(), timing });
        }
        Err(EvolveError::Policy(e)) => {
            report.status = RunStatus::Overflow;
            report.message = Some(e.to_string());
            return Ok(RunOutput { report, history: Vec::new(), timing });
        }
        Err(e) => return Err(e.into()),
    };
    report.generations_completed = outcome.history.len();
    let (s, g) = outcome.best.rules.sizes();
    report.sigma_size = Some(s);
    report.gamma_size = Some(g);
    report.train_fitness = Some(outcome.best.fitness);
    report.best_rules = Some(outcome.best.rules.to_string());

    let t1 = Instant::now();
    match evaluate_rules(&outcome.best.rules, algorithm, &cfg.knee, test, report.test_seed, exp.test_realizations) {
        Ok(eval) => {
            report.test_objective = Some(eval.objective);
            if matches!(algorithm, PolicyKind::KggpMax | PolicyKind::KggpAll) {
                report.reduction = reduction_report(&eval.decisions).ok();
            }
        }
        Err(EvolveError::Policy(e)) => {
            report.status = RunStatus::Overflow;
            report.message = Some(e.to_string());
        }
        Err(e) => return Err(e.into()),
    }
    timing.test_seconds = t1.elapsed().as_secs_f64();
    Ok(RunOutput { report, history: outcome.history, timing })
}

pub fn run_dir(out: &Path, scenario: &str, algorithm: PolicyKind, run: usize) -> PathBuf {
    out.join("runs").join(slug(scenario)).join(algorithm.name()).join(format!("run{run:03}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|source| ExperimentError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn write_run(out: &Path, o: &RunOutput) -> Result<(), ExperimentError> {
    let dir = run_dir(out, &o.report.scenario, o.report.algorithm, o.report.run);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_json(&dir.join("report.json"), &o.report)?;
    write_json(&dir.join("timing.json"), &o.timing)?;
    if !o.history.is_empty() {
        let p = dir.join("history.csv");
        let f = fs::File::create(&p).map_err(io_err(&p))?;
        write_history(&o.history, f, false)?;
    }
    if let Some(r) = &o.report.best_rules {
        let p = dir.join("best.rules");
        fs::write(&p, r).map_err(io_err(&p))?;
    }
    Ok(())
}

/// Runs every (scenario, algorithm, run) combination on up to `workers`
/// threads and returns the outputs in that order. With `out` set, each run
/// writes its own directory as soon as it finishes.
pub fn run_experiment(exp: &Experiment, out: Option<&Path>, workers: usize) -> Result<Vec<RunOutput>, ExperimentError> {
    exp.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        if let Some(out) = out {
            fs::create_dir_all(out).map_err(io_err(out))?;
            write_json(&out.join("experiment.json"), exp)?;
        }
        let mut outputs = Vec::new();
        for (sc, scenario) in exp.scenarios.iter().enumerate() {
            let train = scenario.training_set()?;
            let test = scenario.test_set()?;
            if let Some(out) = out {
                let dir = out.join("instances").join(slug(&scenario.name));
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                for (i, inst) in test.iter().enumerate() {
                    let p = dir.join(format!("test_{}.json", scenario.test_seed + i as u64));
                    inst.save(&p).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
                }
            }
            let tasks: Vec<(PolicyKind, usize)> =
                exp.algorithms.iter().flat_map(|&a| (0..exp.runs).map(move |r| (a, r))).collect();
            let results: Vec<RunOutput> = tasks
                .par_iter()
                .map(|&(alg, run)| {
                    let o = run_one(exp, sc, alg, run, &train, &test)?;
                    log::info!(
                        "{} {} run {}: {:?} test {:?}",
                        scenario.name,
                        alg,
                        run,
                        o.report.status,
                        o.report.test_objective
                    );
                    if let Some(out) = out {
                        write_run(out, &o)?;
                    }
                    Ok(o)
                })
                .collect::<Result<_, ExperimentError>>()?;
            outputs.extend(results);
        }
        Ok(outputs)
    })
}
