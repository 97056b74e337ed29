use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use kneesched_core::evolve::{evolve, write_history, GpConfig};
use kneesched_core::experiment::{
    emit_plot_data, evaluate_rules, load_results, run_experiment, summarize, summary_table, write_summary, Experiment,
};
use kneesched_core::instgen::{generate_instance, order_strength, GenSpec};
use kneesched_core::sim::{sample_durations, solve_with, write_decision_log, SimOptions};
use kneesched_core::{validate_schedule, DurationTable, KneeConfig, PolicyKind, ProjectInstance, RulePair, Schedule};

#[derive(Parser)]
#[command(name = "kneesched", version, about = "Knee-point guided group scheduling rules for uncertain projects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate instances for seeds seed..seed+count-1.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate one instance under a rule file and report the makespan.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        rules: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Realization seed; expected durations when absent.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the schedule JSON here.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Write the decision log CSV here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Check a schedule against an instance.
    Validate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
    },
    /// Train a rule pair with genetic programming.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        /// Training instances; the config's list is used when absent.
        #[arg(long, num_args = 1..)]
        instances: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        policy: Option<PolicyKind>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Mean deviation of a rule file over instances and seeded realizations.
    Evaluate {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        instances: Vec<PathBuf>,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        realizations: usize,
    },
    /// Experiment harness.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run every scenario, algorithm and run of an experiment file.
    Run {
        #[arg(long)]
        experiment: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Mean (std) table with rank-sum markers against the first algorithm.
    Stats {
        #[arg(long = "in")]
        dir: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Convergence, rule-size and runtime CSVs for plotting.
    Plots {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long, default_value = "kggp-max")]
    policy: PolicyKind,
    #[arg(long)]
    knee_cap: Option<usize>,
    #[arg(long)]
    group_limit: Option<u64>,
}

impl PolicyArgs {
    fn knee(&self) -> KneeConfig {
        let mut k = KneeConfig::default();
        if let Some(c) = self.knee_cap {
            k.cap = c;
        }
        if let Some(g) = self.group_limit {
            k.group_limit = g;
        }
        k
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_instance(path: &Path) -> Result<ProjectInstance> {
    ProjectInstance::load(path).with_context(|| format!("loading instance {}", path.display()))
}

fn load_rules(path: &Path) -> Result<RulePair> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse().with_context(|| format!("parsing rules {}", path.display()))
}

fn gen(spec: &Path, out: &Path, count: u64, seed: Option<u64>) -> Result<()> {
    let spec: GenSpec = read_json(spec)?;
    let base = seed.unwrap_or(spec.seed);
    fs::create_dir_all(out)?;
    for s in base..base + count {
        let inst = generate_instance(&spec.clone().with_seed(s))?;
        let path = out.join(format!("instance_{s}.json"));
        inst.save(&path)?;
        println!("{}\tos={:.4}\tlb={}", path.display(), order_strength(&inst), inst.lower_bound());
    }
    Ok(())
}

fn solve(
    instance: &Path,
    rules: &Path,
    policy: &PolicyArgs,
    seed: Option<u64>,
    schedule: Option<&Path>,
    log: Option<&Path>,
) -> Result<()> {
    let inst = load_instance(instance)?;
    let rules = load_rules(rules)?;
    let table = match seed {
        Some(s) => sample_durations(&inst, s),
        None => DurationTable::expected(&inst),
    };
    let built = policy.policy.build(&rules, &policy.knee())?;
    let res = solve_with(&inst, &built, &mut &table, SimOptions::default())?;
    let valid = validate_schedule(&inst, &res.schedule)?.is_ok();
    let lb = inst.lower_bound();
    println!("makespan\t{}", res.makespan());
    println!("lower_bound\t{lb}");
    println!("deviation\t{}", (res.makespan() as f64 - lb as f64) / lb.max(1) as f64);
    println!("decisions\t{}", res.stats.policy_calls);
    println!("valid\t{valid}");
    if let Some(p) = schedule {
        fs::write(p, res.schedule.to_json())?;
    }
    if let Some(p) = log {
        write_decision_log(&res.decisions, fs::File::create(p)?)?;
    }
    if !valid {
        bail!("schedule failed validation");
    }
    Ok(())
}

fn validate(instance: &Path, schedule: &Path) -> Result<()> {
    let inst = load_instance(instance)?;
    let sched: Schedule = read_json(schedule)?;
    let result = validate_schedule(&inst, &sched)?;
    for v in &result.violations {
        println!("{v:?}");
    }
    if !result.is_ok() {
        bail!("{} violation(s)", result.violations.len());
    }
    println!("ok\tmakespan={}", sched.makespan);
    Ok(())
}

fn train(config: &Path, instances: &[PathBuf], out: &Path, policy: Option<PolicyKind>, seed: Option<u64>) -> Result<()> {
    let mut cfg: GpConfig = read_json(config)?;
    if let Some(p) = policy {
        cfg.policy = p;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let paths = if instances.is_empty() { cfg.training_instances.clone() } else { instances.to_vec() };
    if paths.is_empty() {
        bail!("no training instances given");
    }
    let insts = paths.iter().map(|p| load_instance(p)).collect::<Result<Vec<_>>>()?;
    let outcome = evolve(&cfg, &insts)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("best.rules"), outcome.best.rules.to_string())?;
    write_history(&outcome.history, fs::File::create(out.join("history.csv"))?, true)?;
    println!("fitness\t{}", outcome.best.fitness);
    print!("{}", outcome.best.rules);
    Ok(())
}

fn evaluate(rules: &Path, instances: &[PathBuf], policy: &PolicyArgs, seed: u64, realizations: usize) -> Result<()> {
    let rules = load_rules(rules)?;
    let insts = instances.iter().map(|p| load_instance(p)).collect::<Result<Vec<_>>>()?;
    let e = evaluate_rules(&rules, policy.policy, &policy.knee(), &insts, seed, realizations)?;
    println!("objective\t{}", e.objective);
    println!("cases\t{}", e.deviations.len());
    Ok(())
}

fn bench(command: BenchCommand) -> Result<()> {
    match command {
        BenchCommand::Run { experiment, out, workers } => {
            let exp = Experiment::load(&experiment)?;
            let outputs = run_experiment(&exp, Some(&out), workers)?;
            println!("{} run(s) written to {}", outputs.len(), out.display());
        }
        BenchCommand::Stats { dir, alpha } => {
            let (exp, results) = load_results(&dir)?;
            let rows = summarize(&exp, &results, alpha);
            write_summary(&dir, &exp, &rows)?;
            print!("{}", summary_table(&exp, &rows));
        }
        BenchCommand::Plots { dir } => {
            for p in emit_plot_data(&dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Gen { spec, out, count, seed } => gen(&spec, &out, count, seed),
        Command::Solve { instance, rules, policy, seed, schedule, log } => {
            solve(&instance, &rules, &policy, seed, schedule.as_deref(), log.as_deref())
        }
        Command::Validate { instance, schedule } => validate(&instance, &schedule),
        Command::Evolve { config, instances, out, policy, seed } => train(&config, &instances, &out, policy, seed),
        Command::Evaluate { rules, instances, policy, seed, realizations } => {
            evaluate(&rules, &instances, &policy, seed, realizations)
        }
        Command::Bench { command } => bench(command),
    }
}
