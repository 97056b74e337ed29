//! Dynamic execution of a project under a decision policy.
//!
//! The clock starts at zero with every resource free. At each tick finished
//! activities release their resources, then the policy is asked repeatedly
//! for a group to start until it declines or nothing is eligible. Realized
//! durations become known only when an activity starts.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitset::BitSet;
use crate::model::{ActivityId, ProjectInstance, ResourceVector, Schedule, ScheduledActivity};
use crate::policy::{DecisionPolicy, PolicyError};
use crate::rules::{DecisionContext, Pair, RunningActivity};
use crate::seeds;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("t={clock}: policy chose {pair}, which is not eligible")]
    NotEligible { clock: u32, pair: Pair },
    #[error("t={clock}: policy chose activity {activity} twice in one group")]
    DuplicateActivity { clock: u32, activity: ActivityId },
    #[error("t={clock}: group {group:?} exceeds available resources")]
    OverCapacity { clock: u32, group: Vec<Pair> },
    #[error("t={clock}: nothing is running and the policy keeps waiting")]
    Stalled { clock: u32 },
    #[error("duration table does not match the instance")]
    TableMismatch,
}

/// Source of realized durations, queried once when an activity starts.
pub trait DurationSource {
    fn reveal(&mut self, activity: ActivityId, mode: usize) -> u32;
}

/// Pre-sampled realized duration for every (activity, mode) pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DurationTable {
    pub realized: Vec<Vec<u32>>,
    pub seed: Option<u64>,
}

impl DurationTable {
    /// Every pair realized at its expected duration.
    pub fn expected(instance: &ProjectInstance) -> Self {
        DurationTable {
            realized: instance
                .activities()
                .iter()
                .map(|a| a.modes.iter().map(|m| m.expected_duration).collect())
                .collect(),
            seed: None,
        }
    }

    pub fn get(&self, activity: ActivityId, mode: usize) -> u32 {
        self.realized[activity][mode]
    }

    pub fn matches(&self, instance: &ProjectInstance) -> bool {
        self.realized.len() == instance.len()
            && instance.activities().iter().zip(&self.realized).all(|(a, row)| {
                row.len() == a.modes.len()
                    && a.modes.iter().zip(row).all(|(m, &d)| m.min_duration <= d && d <= m.max_duration)
            })
    }
}

impl DurationSource for DurationTable {
    fn reveal(&mut self, activity: ActivityId, mode: usize) -> u32 {
        self.get(activity, mode)
    }
}

impl DurationSource for &DurationTable {
    fn reveal(&mut self, activity: ActivityId, mode: usize) -> u32 {
        self.get(activity, mode)
    }
}

/// The realized duration of one pair under `seed`. Each pair has its own
/// stream, so the value does not depend on when (or whether) other pairs
/// are sampled.
pub fn sample_pair_duration(instance: &ProjectInstance, seed: u64, activity: ActivityId, mode: usize) -> u32 {
    let m = instance.mode(activity, mode);
    if m.min_duration == m.max_duration {
        return m.min_duration;
    }
    let mut rng = seeds::rng_from(seed, &[activity as u64, mode as u64]);
    rng.random_range(m.min_duration..=m.max_duration)
}

/// Uniform-integer realization of every pair in `[min, max]`.
pub fn sample_durations(instance: &ProjectInstance, seed: u64) -> DurationTable {
    DurationTable {
        realized: instance
            .activities()
            .iter()
            .map(|a| (0..a.modes.len()).map(|m| sample_pair_duration(instance, seed, a.id, m)).collect())
            .collect(),
        seed: Some(seed),
    }
}

/// One policy call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub clock: u32,
    /// Eligible activity-mode pairs.
    pub eligible_size: usize,
    /// Distinct activities among the eligible pairs.
    pub eligible_activities: usize,
    pub filtered_size: usize,
    pub candidates: u64,
    pub group: Vec<Pair>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SimStats {
    pub policy_calls: u64,
    pub candidates: u64,
    pub ticks: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimResult {
    pub schedule: Schedule,
    pub decisions: Vec<DecisionRecord>,
    pub stats: SimStats,
}

impl SimResult {
    pub fn makespan(&self) -> u32 {
        self.schedule.makespan
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StepMode {
    /// Advance the clock one unit at a time.
    Unit,
    /// Jump straight to the next completion whenever nothing is eligible.
    /// Eligibility can only change at completions, so schedules and decision
    /// logs are identical to [`StepMode::Unit`].
    #[default]
    NextEvent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimOptions {
    pub step: StepMode,
    pub log_decisions: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { step: StepMode::NextEvent, log_decisions: true }
    }
}

/// Pairs `(i, m)` with `i` unstarted, every predecessor complete, and the
/// mode's demand within current availability. Ordered by activity, then mode.
pub fn eligible_set(instance: &ProjectInstance, ctx: &DecisionContext) -> Vec<Pair> {
    let mut out = Vec::new();
    for id in instance.real_ids() {
        if ctx.is_started(id) {
            continue;
        }
        let act = instance.activity(id);
        if !act.predecessors.iter().all(|&p| ctx.completed().contains(p)) {
            continue;
        }
        for (mi, m) in act.modes.iter().enumerate() {
            if m.demand.fits_within(ctx.availability()) {
                out.push(Pair::new(id, mi));
            }
        }
    }
    out
}

struct Running {
    pair: Pair,
    start: u32,
    finish: u32,
}

struct SimState<'a> {
    instance: &'a ProjectInstance,
    clock: u32,
    availability: ResourceVector,
    completed: BitSet,
    started: BitSet,
    running: Vec<Running>,
    remaining: usize,
    schedule: Schedule,
}

impl<'a> SimState<'a> {
    fn new(instance: &'a ProjectInstance) -> Self {
        let mut completed = BitSet::new(instance.len());
        completed.insert(instance.start_id());
        let mut started = completed.clone();
        started.insert(instance.start_id());
        SimState {
            instance,
            clock: 0,
            availability: instance.capacities().clone(),
            completed,
            started,
            running: Vec::new(),
            remaining: instance.n_real(),
            schedule: Schedule::default(),
        }
    }

    fn process_completions(&mut self) {
        let clock = self.clock;
        let inst = self.instance;
        let mut i = 0;
        while i < self.running.len() {
            if self.running[i].finish <= clock {
                let r = self.running.swap_remove(i);
                self.availability += &inst.mode(r.pair.activity, r.pair.mode).demand;
                self.completed.insert(r.pair.activity);
                self.remaining -= 1;
            } else {
                i += 1;
            }
        }
        if self.remaining == 0 {
            self.completed.insert(inst.end_id());
        }
    }

    fn context(&self) -> DecisionContext<'a> {
        let mut running: Vec<RunningActivity> = self
            .running
            .iter()
            .map(|r| RunningActivity { activity: r.pair.activity, mode: r.pair.mode, start: r.start })
            .collect();
        running.sort_by_key(|r| r.activity);
        DecisionContext::new(self.instance, self.clock, self.availability.clone(), self.completed.clone(), running)
    }

    fn start_group(&mut self, group: &[Pair], eligible: &[Pair], durations: &mut impl DurationSource) -> Result<(), SimError> {
        let clock = self.clock;
        let inst = self.instance;
        let mut seen = BitSet::new(inst.len());
        let mut total = ResourceVector::zeros(inst.n_resources());
        for &p in group {
            if eligible.binary_search(&p).is_err() {
                return Err(SimError::NotEligible { clock, pair: p });
            }
            if seen.contains(p.activity) {
                return Err(SimError::DuplicateActivity { clock, activity: p.activity });
            }
            seen.insert(p.activity);
            total += &inst.mode(p.activity, p.mode).demand;
        }
        if !total.fits_within(&self.availability) {
            return Err(SimError::OverCapacity { clock, group: group.to_vec() });
        }
        self.availability -= &total;
        for &p in group {
            let d = durations.reveal(p.activity, p.mode);
            self.started.insert(p.activity);
            self.schedule.insert(p.activity, ScheduledActivity { mode: p.mode, start: clock, duration: d });
            self.running.push(Running { pair: p, start: clock, finish: clock + d });
        }
        Ok(())
    }
}

/// Runs the project to completion with default options.
pub fn solve(
    instance: &ProjectInstance,
    policy: &dyn DecisionPolicy,
    durations: &DurationTable,
) -> Result<SimResult, SimError> {
    if !durations.matches(instance) {
        return Err(SimError::TableMismatch);
    }
    let mut source = durations;
    solve_with(instance, policy, &mut source, SimOptions::default())
}

pub fn solve_with(
    instance: &ProjectInstance,
    policy: &dyn DecisionPolicy,
    durations: &mut impl DurationSource,
    options: SimOptions,
) -> Result<SimResult, SimError> {
    let mut state = SimState::new(instance);
    let mut decisions = Vec::new();
    let mut stats = SimStats::default();
    loop {
        state.process_completions();
        if state.remaining == 0 {
            break;
        }
        let mut waited = false;
        loop {
            let ctx = state.context();
            let eligible = eligible_set(instance, &ctx);
            if eligible.is_empty() {
                break;
            }
            let decision = policy.decide(&ctx, &eligible)?;
            stats.policy_calls += 1;
            stats.candidates += decision.candidates;
            if options.log_decisions {
                let mut acts: Vec<ActivityId> = eligible.iter().map(|p| p.activity).collect();
                acts.dedup();
                decisions.push(DecisionRecord {
                    clock: state.clock,
                    eligible_size: eligible.len(),
                    eligible_activities: acts.len(),
                    filtered_size: decision.filtered_size,
                    candidates: decision.candidates,
                    group: decision.group.clone(),
                });
            }
            if decision.group.is_empty() {
                waited = true;
                break;
            }
            state.start_group(&decision.group, &eligible, durations)?;
            // Zero-duration activities finish immediately and may release successors now.
            state.process_completions();
            if state.remaining == 0 {
                break;
            }
        }
        if state.remaining == 0 {
            break;
        }
        if state.running.is_empty() {
            return Err(SimError::Stalled { clock: state.clock });
        }
        stats.ticks += 1;
        state.clock = match options.step {
            StepMode::NextEvent if !waited => state.running.iter().map(|r| r.finish).min().expect("non-empty"),
            _ => state.clock + 1,
        };
    }
    let schedule = state.schedule;
    Ok(SimResult { schedule, decisions, stats })
}

/// Writes a decision log as CSV:
/// `clock,eligible_size,filtered_size,group_size,group` with the group as
/// space-separated `activity:mode` tokens.
pub fn write_decision_log(records: &[DecisionRecord], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["clock", "eligible_size", "filtered_size", "group_size", "group"])?;
    for r in records {
        let group: Vec<String> = r.group.iter().map(Pair::to_string).collect();
        w.write_record([
            r.clock.to_string(),
            r.eligible_size.to_string(),
            r.filtered_size.to_string(),
            r.group.len().to_string(),
            group.join(" "),
        ])?;
    }
    w.flush()?;
    Ok(())
}
