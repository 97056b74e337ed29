//! Reduction ratios, summary tables and plot data from run directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stats::{mean_std, wilcoxon_rank_sum, Verdict};
use super::{io_err, run_dir, slug, Experiment, ExperimentError, RunReport, RunStatus, Timing};
use crate::evolve::GenerationStats;
use crate::policy::PolicyKind;
use crate::sim::DecisionRecord;

/// Averages over all decision points of a set of decision logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionStats {
    pub decisions: usize,
    /// Eligible activity-mode pairs.
    pub mean_eligible: f64,
    /// Distinct activities among the eligible pairs.
    pub mean_eligible_activities: f64,
    pub mean_filtered: f64,
    /// Mean of `1 - filtered / eligible pairs` per decision, in [0, 1].
    pub reduction: f64,
    /// Mean of `1 - filtered / eligible activities` per decision. In [0, 1]
    /// for knee-filtered logs, which keep at most one mode per activity.
    pub activity_reduction: f64,
}

pub fn reduction_report(records: &[DecisionRecord]) -> Result<ReductionStats, ExperimentError> {
    if records.is_empty() {
        return Err(ExperimentError::EmptyLog);
    }
    let n = records.len() as f64;
    let mean = |f: &dyn Fn(&DecisionRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let ratio = |filtered: usize, of: usize| if of == 0 { 0.0 } else { 1.0 - filtered as f64 / of as f64 };
    Ok(ReductionStats {
        decisions: records.len(),
        mean_eligible: mean(&|r| r.eligible_size as f64),
        mean_eligible_activities: mean(&|r| r.eligible_activities as f64),
        mean_filtered: mean(&|r| r.filtered_size as f64),
        reduction: mean(&|r| ratio(r.filtered_size, r.eligible_size)),
        activity_reduction: mean(&|r| ratio(r.filtered_size, r.eligible_activities)),
    })
}

/// One run directory read back from disk.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub dir: PathBuf,
    pub report: RunReport,
    pub history: Vec<GenerationStats>,
    pub timing: Option<Timing>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ExperimentError::Json { path: path.to_path_buf(), source })
}

/// Reads `experiment.json` and every run it names that exists under `dir`,
/// in experiment order.
pub fn load_results(dir: &Path) -> Result<(Experiment, Vec<RunResult>), ExperimentError> {
    let exp: Experiment = read_json(&dir.join("experiment.json"))?;
    let mut out = Vec::new();
    for sc in &exp.scenarios {
        for &alg in &exp.algorithms {
            for run in 0..exp.runs {
                let rd = run_dir(dir, &sc.name, alg, run);
                let rp = rd.join("report.json");
                if !rp.exists() {
                    continue;
                }
                let report: RunReport = read_json(&rp)?;
                let hp = rd.join("history.csv");
                let history = if hp.exists() {
                    csv::Reader::from_path(&hp)?.deserialize().collect::<Result<Vec<GenerationStats>, _>>()?
                } else {
                    Vec::new()
                };
                let tp = rd.join("timing.json");
                let timing = if tp.exists() { Some(read_json(&tp)?) } else { None };
                out.push(RunResult { dir: rd, report, history, timing });
            }
        }
    }
    if out.is_empty() {
        return Err(ExperimentError::NoReports(dir.to_path_buf()));
    }
    Ok((exp, out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub algorithm: PolicyKind,
    pub completed: usize,
    pub censored: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Against the experiment's first algorithm; absent for that algorithm itself.
    pub p_value: Option<f64>,
    pub verdict: Option<Verdict>,
    pub mean_eligible: Option<f64>,
    pub mean_filtered: Option<f64>,
    pub reduction: Option<f64>,
}

/// Mean (std) of the test objective per scenario and algorithm, with a
/// rank-sum comparison against the first algorithm. Timed-out and
/// overflowed runs are counted as censored and left out of the statistics.
pub fn summarize(exp: &Experiment, results: &[RunResult], alpha: f64) -> Vec<SummaryRow> {
    let objectives = |sc: &str, alg: PolicyKind| -> Vec<f64> {
        results
            .iter()
            .filter(|r| r.report.scenario == sc && r.report.algorithm == alg && r.report.status == RunStatus::Completed)
            .filter_map(|r| r.report.test_objective)
            .collect()
    };
    let reference = exp.algorithms[0];
    let mut rows = Vec::new();
    for sc in &exp.scenarios {
        let base = objectives(&sc.name, reference);
        for &alg in &exp.algorithms {
            let mine: Vec<&RunResult> =
                results.iter().filter(|r| r.report.scenario == sc.name && r.report.algorithm == alg).collect();
            if mine.is_empty() {
                continue;
            }
            let xs = objectives(&sc.name, alg);
            let (mean, std) = match xs.is_empty() {
                true => (None, None),
                false => {
                    let (m, s) = mean_std(&xs);
                    (Some(m), Some(s))
                }
            };
            let test = (alg != reference && xs.len() >= 2 && base.len() >= 2).then(|| wilcoxon_rank_sum(&xs, &base, alpha));
            let reds: Vec<_> = mine.iter().filter_map(|r| r.report.reduction.as_ref()).collect();
            let avg = |f: &dyn Fn(&super::ReductionStats) -> f64| {
                (!reds.is_empty()).then(|| reds.iter().map(|r| f(r)).sum::<f64>() / reds.len() as f64)
            };
            rows.push(SummaryRow {
                scenario: sc.name.clone(),
                algorithm: alg,
                completed: xs.len(),
                censored: mine.iter().filter(|r| r.report.status != RunStatus::Completed).count(),
                mean,
                std,
                p_value: test.map(|t| t.p_value),
                verdict: test.map(|t| t.verdict),
                mean_eligible: avg(&|r| r.mean_eligible),
                mean_filtered: avg(&|r| r.mean_filtered),
                reduction: avg(&|r| r.reduction),
            });
        }
    }
    rows
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Markdown table: one row per scenario, one `mean(std)marker` cell per algorithm.
pub fn summary_table(exp: &Experiment, rows: &[SummaryRow]) -> String {
    let mut s = String::from("| Scenario |");
    for a in &exp.algorithms {
        s.push_str(&format!(" {a} |"));
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(exp.algorithms.len()));
    s.push('\n');
    for sc in &exp.scenarios {
        s.push_str(&format!("| {} |", sc.name));
        for &a in &exp.algorithms {
            let cell = match rows.iter().find(|r| r.scenario == sc.name && r.algorithm == a) {
                Some(SummaryRow { mean: Some(m), std: Some(sd), verdict, censored, .. }) => {
                    let mark = verdict.map(Verdict::marker).unwrap_or("");
                    let cens = if *censored > 0 { format!(" [{censored} censored]") } else { String::new() };
                    format!("{m:.4}({sd:.4}){mark}{cens}")
                }
                Some(r) => format!("- [{} censored]", r.censored),
                None => "-".into(),
            };
            s.push_str(&format!(" {cell} |"));
        }
        s.push('\n');
    }
    s
}

/// Writes `stats.csv` and `table.md` into `dir`.
pub fn write_summary(dir: &Path, exp: &Experiment, rows: &[SummaryRow]) -> Result<(), ExperimentError> {
    let p = dir.join("stats.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record([
        "scenario",
        "algorithm",
        "completed",
        "censored",
        "mean",
        "std",
        "p_value",
        "verdict",
        "mean_eligible",
        "mean_filtered",
        "reduction",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.algorithm.to_string(),
            r.completed.to_string(),
            r.censored.to_string(),
            opt(r.mean),
            opt(r.std),
            opt(r.p_value),
            r.verdict.map(|v| format!("{v:?}").to_lowercase()).unwrap_or_default(),
            opt(r.mean_eligible),
            opt(r.mean_filtered),
            opt(r.reduction),
        ])?;
    }
    w.flush().map_err(io_err(&p))?;
    let t = dir.join("table.md");
    fs::write(&t, summary_table(exp, rows)).map_err(io_err(&t))
}

/// Writes plot data under `dir/plots`: one convergence file per scenario and
/// algorithm (`convergence_<scenario>_<algorithm>.csv`), `boxplot.csv` and
/// `runtime.csv`. Returns the files written.
pub fn emit_plot_data(dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let (exp, results) = load_results(dir)?;
    let plots = dir.join("plots");
    fs::create_dir_all(&plots).map_err(io_err(&plots))?;
    let mut written = Vec::new();

    for sc in &exp.scenarios {
        for &alg in &exp.algorithms {
            let runs: Vec<&RunResult> = results
                .iter()
                .filter(|r| r.report.scenario == sc.name && r.report.algorithm == alg && !r.history.is_empty())
                .collect();
            if runs.is_empty() {
                log::warn!("no convergence data for {} / {}; skipping", sc.name, alg);
                continue;
            }
            let p = plots.join(format!("convergence_{}_{}.csv", slug(&sc.name), alg));
            let mut w = csv::Writer::from_path(&p)?;
            w.write_record(["run", "generation", "best_fitness", "mean_fitness", "reeval_fitness"])?;
            for r in runs {
                for h in &r.history {
                    w.write_record([
                        r.report.run.to_string(),
                        h.generation.to_string(),
                        h.best_fitness.to_string(),
                        h.mean_fitness.to_string(),
                        h.reeval_fitness.to_string(),
                    ])?;
                }
            }
            w.flush().map_err(io_err(&p))?;
            written.push(p);
        }
    }

    let p = plots.join("boxplot.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["scenario", "algorithm", "run", "sigma_size", "gamma_size", "mean_eligible", "mean_filtered"])?;
    for r in &results {
        let red = r.report.reduction.as_ref();
        w.write_record([
            r.report.scenario.clone(),
            r.report.algorithm.to_string(),
            r.report.run.to_string(),
            r.report.sigma_size.map(|s| s.to_string()).unwrap_or_default(),
            r.report.gamma_size.map(|s| s.to_string()).unwrap_or_default(),
            opt(red.map(|x| x.mean_eligible)),
            opt(red.map(|x| x.mean_filtered)),
        ])?;
    }
    w.flush().map_err(io_err(&p))?;
    written.push(p);

    let p = plots.join("runtime.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["scenario", "algorithm", "run", "n_activities", "train_seconds", "censored"])?;
    for r in &results {
        w.write_record([
            r.report.scenario.clone(),
            r.report.algorithm.to_string(),
            r.report.run.to_string(),
            r.report.n_activities.to_string(),
            opt(r.timing.as_ref().map(|t| t.train_seconds)),
            (r.report.status != RunStatus::Completed).to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&p))?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::run_experiment;
    use crate::experiment::tests::tiny_experiment;

    fn rec(eligible: usize, activities: usize, filtered: usize) -> DecisionRecord {
        DecisionRecord {
            clock: 0,
            eligible_size: eligible,
            eligible_activities: activities,
            filtered_size: filtered,
            candidates: 1,
            group: vec![],
        }
    }

    #[test]
    fn reduction_examples() {
        let r = reduction_report(&[rec(10, 10, 4)]).unwrap();
        assert!((r.reduction - 0.6).abs() < 1e-12);
        let r = reduction_report(&[rec(10, 10, 4), rec(20, 20, 16)]).unwrap();
        assert!((r.reduction - 0.4).abs() < 1e-12);
        assert_eq!(r.mean_eligible, 15.0);
        assert!(matches!(reduction_report(&[]), Err(ExperimentError::EmptyLog)));
    }

    #[test]
    fn files_stats_and_plots() {
        let exp = tiny_experiment();
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&exp, Some(dir.path()), 2).unwrap();
        let (loaded, results) = load_results(dir.path()).unwrap();
        assert_eq!(loaded, exp);
        assert_eq!(results.len(), 6);
        assert!(results.iter().all(|r| r.history.len() == 3));
        let rows = summarize(&exp, &results, 0.05);
        assert_eq!(rows.len(), 2);
        assert!(rows[0].verdict.is_none() && rows[1].verdict.is_some());
        write_summary(dir.path(), &exp, &rows).unwrap();
        let table = fs::read_to_string(dir.path().join("table.md")).unwrap();
        assert!(table.starts_with("| Scenario | sgp | kggp-max |"));
        let files = emit_plot_data(dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let conv = fs::read_to_string(&files[0]).unwrap();
        assert_eq!(conv.lines().count(), 1 + 3 * 3);
    }

    #[test]
    fn censored_runs_flagged() {
        let mut exp = tiny_experiment();
        exp.runs = 1;
        exp.gp.time_budget_secs = Some(0.0);
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&exp, Some(dir.path()), 1).unwrap();
        let files = emit_plot_data(dir.path()).unwrap();
        assert_eq!(files.len(), 2, "convergence files skipped");
        let runtime = fs::read_to_string(dir.path().join("plots/runtime.csv")).unwrap();
        assert!(runtime.lines().skip(1).all(|l| l.ends_with(",true")));
        let (e, results) = load_results(dir.path()).unwrap();
        let rows = summarize(&e, &results, 0.05);
        assert!(rows.iter().all(|r| r.censored == 1 && r.mean.is_none()));
        assert!(summary_table(&e, &rows).contains("[1 censored]"));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let exp = tiny_experiment();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_experiment(&exp, Some(a.path()), 1).unwrap();
        run_experiment(&exp, Some(b.path()), 3).unwrap();
        for run in 0..exp.runs {
            for alg in &exp.algorithms {
                let ra = run_dir(a.path(), "0.5/R2", *alg, run);
                let rb = run_dir(b.path(), "0.5/R2", *alg, run);
                for f in ["report.json", "history.csv", "best.rules"] {
                    assert_eq!(fs::read(ra.join(f)).unwrap(), fs::read(rb.join(f)).unwrap(), "{f}");
                }
            }
        }
    }
}
