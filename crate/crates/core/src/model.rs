//! Project instances, schedules and the schedule feasibility checker.
//!
//! Activities are dense 0-based indices. Index 0 is the dummy start and the
//! last index is the dummy end; both have a single zero-duration,
//! zero-demand mode.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{AddAssign, Index, SubAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitset::BitSet;

pub type ActivityId = usize;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("instance needs at least the two dummy activities, got {0}")]
    TooFewActivities(usize),
    #[error("activity at position {position} has id {id}; ids must be dense and ordered")]
    NonDenseId { position: usize, id: usize },
    #[error("activity {activity} references unknown predecessor {predecessor}")]
    UnknownPredecessor { activity: ActivityId, predecessor: ActivityId },
    #[error("activity {0} lists itself as a predecessor")]
    SelfLoop(ActivityId),
    #[error("activity {0} has no modes")]
    NoModes(ActivityId),
    #[error("activity {activity} mode {mode}: durations must satisfy min <= expected <= max")]
    BadDurations { activity: ActivityId, mode: usize },
    #[error("activity {activity} mode {mode}: demand has {got} entries, expected {expected}")]
    DemandLength { activity: ActivityId, mode: usize, got: usize, expected: usize },
    #[error("dummy activity {0} must have zero durations and zero demand")]
    BadDummy(ActivityId),
    #[error("activity {activity} mode {mode} demands more than the capacity of resource {resource}")]
    UnusableMode { activity: ActivityId, mode: usize, resource: usize },
    #[error("precedence graph contains a cycle")]
    Cycle,
    #[error("activity {0} is not connected between the dummy start and the dummy end")]
    Disconnected(ActivityId),
    #[error("stored lower bound {stored} does not match recomputed critical path {computed}")]
    LowerBoundMismatch { stored: u32, computed: u32 },
    #[error("schedule references unknown activity {0}")]
    UnknownActivity(ActivityId),
    #[error("schedule references unknown mode {mode} of activity {activity}")]
    UnknownMode { activity: ActivityId, mode: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Per-resource-type quantities: demands of a mode, capacities or availability.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceVector(pub Vec<u32>);

impl ResourceVector {
    pub fn zeros(n: usize) -> Self {
        ResourceVector(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    /// Component-wise `self <= other`.
    pub fn fits_within(&self, other: &ResourceVector) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|v| *v as u64).sum()
    }
}

impl Index<usize> for ResourceVector {
    type Output = u32;
    fn index(&self, i: usize) -> &u32 {
        &self.0[i]
    }
}

impl AddAssign<&ResourceVector> for ResourceVector {
    fn add_assign(&mut self, rhs: &ResourceVector) {
        for (a, b) in self.0.iter_mut().zip(&rhs.0) {
            *a += *b;
        }
    }
}

impl SubAssign<&ResourceVector> for ResourceVector {
    fn sub_assign(&mut self, rhs: &ResourceVector) {
        for (a, b) in self.0.iter_mut().zip(&rhs.0) {
            *a -= *b;
        }
    }
}

impl From<Vec<u32>> for ResourceVector {
    fn from(v: Vec<u32>) -> Self {
        ResourceVector(v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mode {
    #[serde(rename = "expected")]
    pub expected_duration: u32,
    #[serde(rename = "min")]
    pub min_duration: u32,
    #[serde(rename = "max")]
    pub max_duration: u32,
    pub demand: ResourceVector,
}

impl Mode {
    pub fn new(expected: u32, min: u32, max: u32, demand: Vec<u32>) -> Self {
        Mode {
            expected_duration: expected,
            min_duration: min,
            max_duration: max,
            demand: ResourceVector(demand),
        }
    }

    pub fn dummy(n_resources: usize) -> Self {
        Mode::new(0, 0, 0, vec![0; n_resources])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Activity {
    pub id: ActivityId,
    pub predecessors: Vec<ActivityId>,
    pub successors: Vec<ActivityId>,
    pub modes: Vec<Mode>,
}

impl Activity {
    /// Smallest expected duration over all modes.
    pub fn min_expected_duration(&self) -> u32 {
        self.modes.iter().map(|m| m.expected_duration).min().unwrap_or(0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Metadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order_strength: Option<f64>,
    pub n_resources: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// One activity as it appears in an instance file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityRecord {
    pub id: ActivityId,
    #[serde(default)]
    pub predecessors: Vec<ActivityId>,
    pub modes: Vec<Mode>,
}

/// On-disk layout of a project instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub activities: Vec<ActivityRecord>,
    pub capacities: ResourceVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<u32>,
    #[serde(default)]
    pub metadata: Metadata,
}

/// Derived precedence data computed once per instance.
#[derive(Clone, Debug)]
pub(crate) struct Topology {
    pub topo_order: Vec<ActivityId>,
    pub all_predecessors: Vec<BitSet>,
    pub all_successors: Vec<BitSet>,
    pub direct_predecessors: Vec<BitSet>,
    pub direct_successors: Vec<BitSet>,
    pub min_duration: Vec<u32>,
    /// Sum of min expected durations over direct successors.
    pub direct_successor_work: Vec<f64>,
    /// Sum of min expected durations over all transitive successors.
    pub all_successor_work: Vec<f64>,
}

/// An immutable, validated project.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct ProjectInstance {
    activities: Vec<Activity>,
    capacities: ResourceVector,
    lower_bound: u32,
    metadata: Metadata,
    topology: Topology,
}

impl PartialEq for ProjectInstance {
    fn eq(&self, other: &Self) -> bool {
        self.activities == other.activities
            && self.capacities == other.capacities
            && self.metadata == other.metadata
    }
}

impl ProjectInstance {
    pub fn new(
        records: Vec<ActivityRecord>,
        capacities: ResourceVector,
        metadata: Metadata,
    ) -> Result<Self, ModelError> {
        let n = records.len();
        if n < 2 {
            return Err(ModelError::TooFewActivities(n));
        }
        let n_res = capacities.len();
        let end = n - 1;
        let mut activities = Vec::with_capacity(n);
        for (pos, rec) in records.into_iter().enumerate() {
            if rec.id != pos {
                return Err(ModelError::NonDenseId { position: pos, id: rec.id });
            }
            if rec.modes.is_empty() {
                return Err(ModelError::NoModes(pos));
            }
            let mut preds = rec.predecessors;
            preds.sort_unstable();
            preds.dedup();
            for &p in &preds {
                if p == pos {
                    return Err(ModelError::SelfLoop(pos));
                }
                if p >= n {
                    return Err(ModelError::UnknownPredecessor { activity: pos, predecessor: p });
                }
            }
            let dummy = pos == 0 || pos == end;
            for (mi, m) in rec.modes.iter().enumerate() {
                if m.demand.len() != n_res {
                    return Err(ModelError::DemandLength {
                        activity: pos,
                        mode: mi,
                        got: m.demand.len(),
                        expected: n_res,
                    });
                }
                if !(m.min_duration <= m.expected_duration && m.expected_duration <= m.max_duration) {
                    return Err(ModelError::BadDurations { activity: pos, mode: mi });
                }
                if dummy && (m.max_duration != 0 || !m.demand.is_zero()) {
                    return Err(ModelError::BadDummy(pos));
                }
                if let Some(r) = (0..n_res).find(|&r| m.demand[r] > capacities[r]) {
                    return Err(ModelError::UnusableMode { activity: pos, mode: mi, resource: r });
                }
            }
            activities.push(Activity {
                id: pos,
                predecessors: preds,
                successors: Vec::new(),
                modes: rec.modes,
            });
        }
        for i in 0..n {
            for p in activities[i].predecessors.clone() {
                activities[p].successors.push(i);
            }
        }
        let topology = Topology::build(&activities)?;
        for i in 1..n {
            if !topology.all_predecessors[i].contains(0) {
                return Err(ModelError::Disconnected(i));
            }
        }
        for i in 0..end {
            if !topology.all_successors[i].contains(end) {
                return Err(ModelError::Disconnected(i));
            }
        }
        let mut inst = ProjectInstance {
            activities,
            capacities,
            lower_bound: 0,
            metadata: Metadata { n_resources: n_res, ..metadata },
            topology,
        };
        inst.lower_bound = cpm_lower_bound(&inst);
        Ok(inst)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serialization is infallible")
    }

    pub fn activities(&self) -> &[Activity] {
        &self.activities
    }

    pub fn activity(&self, id: ActivityId) -> &Activity {
        &self.activities[id]
    }

    pub fn mode(&self, id: ActivityId, mode: usize) -> &Mode {
        &self.activities[id].modes[mode]
    }

    pub fn len(&self) -> usize {
        self.activities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activities.len() <= 2
    }

    /// Number of non-dummy activities.
    pub fn n_real(&self) -> usize {
        self.activities.len() - 2
    }

    pub fn n_resources(&self) -> usize {
        self.capacities.len()
    }

    pub fn capacities(&self) -> &ResourceVector {
        &self.capacities
    }

    pub fn lower_bound(&self) -> u32 {
        self.lower_bound
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn start_id(&self) -> ActivityId {
        0
    }

    pub fn end_id(&self) -> ActivityId {
        self.activities.len() - 1
    }

    pub fn is_dummy(&self, id: ActivityId) -> bool {
        id == 0 || id == self.end_id()
    }

    /// Non-dummy activity ids in ascending order.
    pub fn real_ids(&self) -> std::ops::Range<ActivityId> {
        1..self.end_id()
    }

    pub(crate) fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn topological_order(&self) -> &[ActivityId] {
        &self.topology.topo_order
    }

    /// Whether `a` transitively precedes `b`.
    pub fn precedes(&self, a: ActivityId, b: ActivityId) -> bool {
        self.topology.all_successors[a].contains(b)
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            activities: self
                .activities
                .iter()
                .map(|a| ActivityRecord {
                    id: a.id,
                    predecessors: a.predecessors.clone(),
                    modes: a.modes.clone(),
                })
                .collect(),
            capacities: self.capacities.clone(),
            lower_bound: Some(self.lower_bound),
            metadata: self.metadata.clone(),
        }
    }
}

impl TryFrom<InstanceFile> for ProjectInstance {
    type Error = ModelError;

    fn try_from(file: InstanceFile) -> Result<Self, ModelError> {
        let stored = file.lower_bound;
        let inst = ProjectInstance::new(file.activities, file.capacities, file.metadata)?;
        if let Some(stored) = stored {
            if stored != inst.lower_bound {
                return Err(ModelError::LowerBoundMismatch {
                    stored,
                    computed: inst.lower_bound,
                });
            }
        }
        Ok(inst)
    }
}

impl From<ProjectInstance> for InstanceFile {
    fn from(inst: ProjectInstance) -> Self {
        inst.to_file()
    }
}

impl Topology {
    fn build(activities: &[Activity]) -> Result<Self, ModelError> {
        let n = activities.len();
        let preds: Vec<Vec<usize>> = activities.iter().map(|a| a.predecessors.clone()).collect();
        let topo_order = topological_order(&preds)?;
        let mut all_predecessors = vec![BitSet::new(n); n];
        let mut direct_predecessors = vec![BitSet::new(n); n];
        for &i in &topo_order {
            for &p in &activities[i].predecessors {
                let pp = all_predecessors[p].clone();
                all_predecessors[i].union_with(&pp);
                all_predecessors[i].insert(p);
                direct_predecessors[i].insert(p);
            }
        }
        let mut all_successors = vec![BitSet::new(n); n];
        let mut direct_successors = vec![BitSet::new(n); n];
        for &i in topo_order.iter().rev() {
            for &s in &activities[i].successors {
                let ss = all_successors[s].clone();
                all_successors[i].union_with(&ss);
                all_successors[i].insert(s);
                direct_successors[i].insert(s);
            }
        }
        let min_duration: Vec<u32> = activities.iter().map(Activity::min_expected_duration).collect();
        let direct_successor_work = activities
            .iter()
            .map(|a| a.successors.iter().map(|&s| min_duration[s] as f64).sum())
            .collect();
        let all_successor_work = all_successors
            .iter()
            .map(|set| set.iter().map(|s| min_duration[s] as f64).sum())
            .collect();
        Ok(Topology {
            topo_order,
            all_predecessors,
            all_successors,
            direct_predecessors,
            direct_successors,
            min_duration,
            direct_successor_work,
            all_successor_work,
        })
    }
}

/// Kahn's algorithm; ties resolved by smallest id so the order is deterministic.
pub fn topological_order(predecessors: &[Vec<ActivityId>]) -> Result<Vec<ActivityId>, ModelError> {
    let n = predecessors.len();
    let mut indegree = vec![0usize; n];
    let mut successors = vec![Vec::new(); n];
    for (i, ps) in predecessors.iter().enumerate() {
        for &p in ps {
            if p >= n {
                return Err(ModelError::UnknownPredecessor { activity: i, predecessor: p });
            }
            indegree[i] += 1;
            successors[p].push(i);
        }
    }
    let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
        .filter(|&i| indegree[i] == 0)
        .map(std::cmp::Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(std::cmp::Reverse(i)) = ready.pop() {
        order.push(i);
        for &s in &successors[i] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.push(std::cmp::Reverse(s));
            }
        }
    }
    if order.len() != n {
        return Err(ModelError::Cycle);
    }
    Ok(order)
}

/// Longest path through a precedence graph where each node contributes its duration.
pub fn critical_path_length(predecessors: &[Vec<ActivityId>], durations: &[u32]) -> Result<u32, ModelError> {
    let order = topological_order(predecessors)?;
    let mut finish = vec![0u32; predecessors.len()];
    for &i in &order {
        let start = predecessors[i].iter().map(|&p| finish[p]).max().unwrap_or(0);
        finish[i] = start + durations[i];
    }
    Ok(finish.into_iter().max().unwrap_or(0))
}

/// Resource-unconstrained makespan bound using each activity's shortest expected duration.
pub fn cpm_lower_bound(instance: &ProjectInstance) -> u32 {
    let preds: Vec<Vec<usize>> = instance.activities.iter().map(|a| a.predecessors.clone()).collect();
    critical_path_length(&preds, &instance.topology.min_duration).expect("instance graph is acyclic")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledActivity {
    pub mode: usize,
    pub start: u32,
    pub duration: u32,
}

impl ScheduledActivity {
    pub fn finish(&self) -> u32 {
        self.start + self.duration
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub entries: BTreeMap<ActivityId, ScheduledActivity>,
    pub makespan: u32,
}

impl Schedule {
    pub fn from_entries(entries: BTreeMap<ActivityId, ScheduledActivity>) -> Self {
        let makespan = entries.values().map(ScheduledActivity::finish).max().unwrap_or(0);
        Schedule { entries, makespan }
    }

    pub fn insert(&mut self, id: ActivityId, entry: ScheduledActivity) {
        self.makespan = self.makespan.max(entry.finish());
        self.entries.insert(id, entry);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serialization is infallible")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    MissingActivity(ActivityId),
    DurationOutOfRange { activity: ActivityId, duration: u32 },
    Precedence { activity: ActivityId, predecessor: ActivityId, start: u32, predecessor_finish: u32 },
    Resource { time: u32, resource: usize, demand: u32, capacity: u32 },
    MakespanMismatch { stated: u32, actual: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingActivity(a) => write!(f, "activity {a} is not scheduled"),
            Violation::DurationOutOfRange { activity, duration } => {
                write!(f, "activity {activity} has realized duration {duration} outside its mode range")
            }
            Violation::Precedence { activity, predecessor, start, predecessor_finish } => write!(
                f,
                "activity {activity} starts at {start} before predecessor {predecessor} finishes at {predecessor_finish}"
            ),
            Violation::Resource { time, resource, demand, capacity } => {
                write!(f, "resource {resource} over capacity at t={time}: {demand} > {capacity}")
            }
            Violation::MakespanMismatch { stated, actual } => {
                write!(f, "stated makespan {stated} differs from actual {actual}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationResult {
    pub violations: Vec<Violation>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks precedence and renewable-resource feasibility of a schedule.
///
/// Resource usage is checked at every integer time point; dummy activities
/// may be omitted from the schedule.
pub fn validate_schedule(instance: &ProjectInstance, schedule: &Schedule) -> Result<ValidationResult, ModelError> {
    for (&id, e) in &schedule.entries {
        if id >= instance.len() {
            return Err(ModelError::UnknownActivity(id));
        }
        if e.mode >= instance.activity(id).modes.len() {
            return Err(ModelError::UnknownMode { activity: id, mode: e.mode });
        }
    }
    let mut violations = Vec::new();
    for id in instance.real_ids() {
        if !schedule.entries.contains_key(&id) {
            violations.push(Violation::MissingActivity(id));
        }
    }
    for (&id, e) in &schedule.entries {
        let m = instance.mode(id, e.mode);
        if e.duration < m.min_duration || e.duration > m.max_duration {
            violations.push(Violation::DurationOutOfRange { activity: id, duration: e.duration });
        }
        for &p in &instance.activity(id).predecessors {
            if let Some(pe) = schedule.entries.get(&p) {
                if e.start < pe.finish() {
                    violations.push(Violation::Precedence {
                        activity: id,
                        predecessor: p,
                        start: e.start,
                        predecessor_finish: pe.finish(),
                    });
                }
            }
        }
    }
    let horizon = schedule.entries.values().map(ScheduledActivity::finish).max().unwrap_or(0);
    let n_res = instance.n_resources();
    for t in 0..horizon {
        let mut usage = vec![0u32; n_res];
        for (&id, e) in &schedule.entries {
            if e.start <= t && t < e.finish() {
                for (u, d) in usage.iter_mut().zip(instance.mode(id, e.mode).demand.iter()) {
                    *u += d;
                }
            }
        }
        for (r, &u) in usage.iter().enumerate() {
            if u > instance.capacities()[r] {
                violations.push(Violation::Resource {
                    time: t,
                    resource: r,
                    demand: u,
                    capacity: instance.capacities()[r],
                });
            }
        }
    }
    if schedule.makespan != horizon {
        violations.push(Violation::MakespanMismatch { stated: schedule.makespan, actual: horizon });
    }
    Ok(ValidationResult { violations })
}
