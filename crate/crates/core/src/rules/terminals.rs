//! The terminal set and the decision-time state it is evaluated against.
//!
//! Every time-related quantity is expressed relative to the current clock,
//! so shifting the whole state by a constant leaves all values unchanged.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bitset::BitSet;
use crate::model::{ActivityId, ProjectInstance, ResourceVector};

/// An (activity, mode index) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub activity: ActivityId,
    pub mode: usize,
}

impl Pair {
    pub fn new(activity: ActivityId, mode: usize) -> Self {
        Pair { activity, mode }
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.activity, self.mode)
    }
}

/// How a terminal is lifted from single pairs to groups of pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Adaptation {
    Averaging,
    Union,
    Aggregation,
}

macro_rules! terminals {
    ($($variant:ident => $name:literal, $class:ident;)*) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum TerminalId {
            $($variant,)*
        }

        impl TerminalId {
            pub const ALL: [TerminalId; terminals!(@count $($variant)*)] = [$(TerminalId::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(TerminalId::$variant => $name,)*
                }
            }

            pub fn adaptation(self) -> Adaptation {
                match self {
                    $(TerminalId::$variant => Adaptation::$class,)*
                }
            }
        }
    };
    (@count $($t:ident)*) => { <[()]>::len(&[$(terminals!(@unit $t)),*]) };
    (@unit $t:ident) => { () };
}

terminals! {
    Est => "EST", Averaging;
    Eft => "EFT", Averaging;
    Lst => "LST", Averaging;
    Lft => "LFT", Averaging;
    ExpDur => "ExpDur", Averaging;
    OptDur => "OptDur", Averaging;
    PessDur => "PessDur", Averaging;
    Grpw => "GRPW", Union;
    GrpwAll => "GRPW_all", Union;
    Tpc => "TPC", Union;
    Dpc => "DPC", Union;
    Tsc => "TSC", Union;
    Dsc => "DSC", Union;
    AvgRr => "AvgRR", Aggregation;
    MaxRr => "MaxRR", Aggregation;
    MinRr => "MinRR", Aggregation;
    AvgRa => "AvgRA", Aggregation;
    MaxRa => "MaxRA", Aggregation;
    MinRa => "MinRA", Aggregation;
    AvgRla => "AvgRLA", Aggregation;
    MaxRla => "MaxRLA", Aggregation;
    MinRla => "MinRLA", Aggregation;
    Rr => "RR", Aggregation;
    Grd => "GRD", Aggregation;
}

pub const N_TERMINALS: usize = TerminalId::ALL.len();

impl TerminalId {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TerminalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TerminalId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(t) = TerminalId::ALL.iter().find(|t| t.name() == s) {
            return Ok(*t);
        }
        // Short forms seen in printed rules.
        match s {
            "ES" => Ok(TerminalId::Est),
            "EF" => Ok(TerminalId::Eft),
            "LS" => Ok(TerminalId::Lst),
            "LF" => Ok(TerminalId::Lft),
            _ => Err(format!("unknown terminal `{s}`")),
        }
    }
}

/// Which terminals a tree reads, so evaluation can skip the rest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TerminalMask(u32);

impl TerminalMask {
    pub fn all() -> Self {
        TerminalMask((1 << N_TERMINALS) - 1)
    }

    pub fn insert(&mut self, t: TerminalId) {
        self.0 |= 1 << t.index();
    }

    pub fn contains(self, t: TerminalId) -> bool {
        self.0 & (1 << t.index()) != 0
    }
}

/// Values of the terminal set for one pair or group. Terminals outside the
/// requested mask are left at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalValues(pub [f64; N_TERMINALS]);

impl TerminalValues {
    pub fn get(&self, t: TerminalId) -> f64 {
        self.0[t.index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunningActivity {
    pub activity: ActivityId,
    pub mode: usize,
    pub start: u32,
}

/// Snapshot of project execution at a decision point.
#[derive(Clone, Debug)]
pub struct DecisionContext<'a> {
    instance: &'a ProjectInstance,
    clock: u32,
    availability: ResourceVector,
    completed: BitSet,
    running: Vec<RunningActivity>,
    started: BitSet,
    /// Clock-relative earliest start per activity.
    est: Vec<f64>,
    /// Clock-relative latest finish per activity.
    lft: Vec<f64>,
}

impl<'a> DecisionContext<'a> {
    pub fn new(
        instance: &'a ProjectInstance,
        clock: u32,
        availability: ResourceVector,
        completed: BitSet,
        running: Vec<RunningActivity>,
    ) -> Self {
        debug_assert!(availability.fits_within(instance.capacities()));
        let n = instance.len();
        let mut started = completed.clone();
        for r in &running {
            started.insert(r.activity);
        }
        let topo = instance.topology();
        let mut remaining = vec![0.0f64; n];
        for r in &running {
            let d = instance.mode(r.activity, r.mode).expected_duration;
            remaining[r.activity] = (r.start as f64 + d as f64 - clock as f64).max(0.0);
        }
        let mut est = vec![0.0; n];
        let mut eft = vec![0.0; n];
        for &i in &topo.topo_order {
            if completed.contains(i) {
                continue;
            }
            if started.contains(i) {
                eft[i] = remaining[i];
                continue;
            }
            let es = instance.activity(i).predecessors.iter().map(|&p| eft[p]).fold(0.0, f64::max);
            est[i] = es;
            eft[i] = es + topo.min_duration[i] as f64;
        }
        let horizon = eft.iter().copied().fold(0.0, f64::max);
        let mut lft = vec![horizon; n];
        for &i in topo.topo_order.iter().rev() {
            lft[i] = instance
                .activity(i)
                .successors
                .iter()
                .map(|&s| lft[s] - topo.min_duration[s] as f64)
                .fold(horizon, f64::min);
        }
        DecisionContext { instance, clock, availability, completed, running, started, est, lft }
    }

    /// Context at time zero with nothing started.
    pub fn initial(instance: &'a ProjectInstance) -> Self {
        let mut completed = BitSet::new(instance.len());
        completed.insert(instance.start_id());
        Self::new(instance, 0, instance.capacities().clone(), completed, Vec::new())
    }

    pub fn instance(&self) -> &'a ProjectInstance {
        self.instance
    }

    pub fn clock(&self) -> u32 {
        self.clock
    }

    pub fn availability(&self) -> &ResourceVector {
        &self.availability
    }

    pub fn completed(&self) -> &BitSet {
        &self.completed
    }

    pub fn running(&self) -> &[RunningActivity] {
        &self.running
    }

    pub fn is_started(&self, id: ActivityId) -> bool {
        self.started.contains(id)
    }

    /// Joint demand of a group.
    pub fn group_demand(&self, group: &[Pair]) -> ResourceVector {
        let mut total = ResourceVector::zeros(self.instance.n_resources());
        for p in group {
            total += &self.instance.mode(p.activity, p.mode).demand;
        }
        total
    }

    pub fn group_fits(&self, group: &[Pair]) -> bool {
        self.group_demand(group).fits_within(&self.availability)
    }

    fn count_real(&self, set: &BitSet) -> f64 {
        let mut c = set.count();
        if set.contains(self.instance.start_id()) {
            c -= 1;
        }
        if set.contains(self.instance.end_id()) {
            c -= 1;
        }
        c as f64
    }

    /// Terminal values of a single pair.
    pub fn pair_values(&self, pair: Pair, mask: TerminalMask) -> TerminalValues {
        self.group_values(std::slice::from_ref(&pair), mask)
    }

    /// Terminal values of a group under averaging / union / aggregation.
    /// A singleton group yields exactly the single-pair values.
    pub fn group_values(&self, group: &[Pair], mask: TerminalMask) -> TerminalValues {
        use TerminalId::*;
        let mut v = [0.0; N_TERMINALS];
        if group.is_empty() {
            return TerminalValues(v);
        }
        let inst = self.instance;
        let topo = inst.topology();
        let k = group.len() as f64;
        let want = |t: TerminalId| mask.contains(t);

        let mut mean = |t: TerminalId, f: &dyn Fn(Pair) -> f64| {
            if want(t) {
                v[t.index()] = group.iter().map(|&p| f(p)).sum::<f64>() / k;
            }
        };
        let dur = |p: Pair| inst.mode(p.activity, p.mode).expected_duration as f64;
        mean(Est, &|p| self.est[p.activity]);
        mean(Eft, &|p| self.est[p.activity] + dur(p));
        mean(Lst, &|p| self.lft[p.activity] - dur(p));
        mean(Lft, &|p| self.lft[p.activity]);
        mean(ExpDur, &dur);
        mean(OptDur, &|p| inst.mode(p.activity, p.mode).min_duration as f64);
        mean(PessDur, &|p| inst.mode(p.activity, p.mode).max_duration as f64);

        let union = |sets: &[BitSet]| -> BitSet {
            let mut u = sets[group[0].activity].clone();
            for p in &group[1..] {
                u.union_with(&sets[p.activity]);
            }
            u
        };
        let mean_dur = group.iter().map(|&p| dur(p)).sum::<f64>() / k;
        if want(Grpw) {
            v[Grpw.index()] = if group.len() == 1 {
                mean_dur + topo.direct_successor_work[group[0].activity]
            } else {
                let u = union(&topo.direct_successors);
                mean_dur + u.iter().map(|s| topo.min_duration[s] as f64).sum::<f64>()
            };
        }
        if want(GrpwAll) {
            v[GrpwAll.index()] = if group.len() == 1 {
                mean_dur + topo.all_successor_work[group[0].activity]
            } else {
                let u = union(&topo.all_successors);
                mean_dur + u.iter().map(|s| topo.min_duration[s] as f64).sum::<f64>()
            };
        }
        for (t, sets) in [
            (Tpc, &topo.all_predecessors),
            (Dpc, &topo.direct_predecessors),
            (Tsc, &topo.all_successors),
            (Dsc, &topo.direct_successors),
        ] {
            if want(t) {
                v[t.index()] = if group.len() == 1 {
                    self.count_real(&sets[group[0].activity])
                } else {
                    self.count_real(&union(sets))
                };
            }
        }

        let n_res = inst.n_resources();
        let demand = self.group_demand(group);
        let stats = |xs: &mut dyn Iterator<Item = f64>| -> (f64, f64, f64) {
            let (mut sum, mut max, mut min) = (0.0, f64::NEG_INFINITY, f64::INFINITY);
            for x in xs {
                sum += x;
                max = max.max(x);
                min = min.min(x);
            }
            if n_res == 0 {
                (0.0, 0.0, 0.0)
            } else {
                (sum / n_res as f64, max, min)
            }
        };
        let (avg, max, min) = stats(&mut demand.iter().map(|d| d as f64));
        v[AvgRr.index()] = avg;
        v[MaxRr.index()] = max;
        v[MinRr.index()] = min;
        let (avg, max, min) = stats(&mut self.availability.iter().map(|a| a as f64));
        v[AvgRa.index()] = avg;
        v[MaxRa.index()] = max;
        v[MinRa.index()] = min;
        let (avg, max, min) = stats(
            &mut self
                .availability
                .iter()
                .zip(demand.iter())
                .map(|(a, d)| a as f64 - d as f64),
        );
        v[AvgRla.index()] = avg;
        v[MaxRla.index()] = max;
        v[MinRla.index()] = min;
        v[Rr.index()] = demand.total() as f64;
        v[Grd.index()] = group
            .iter()
            .map(|p| {
                let m = inst.mode(p.activity, p.mode);
                m.expected_duration as f64 * m.demand.iter().max().unwrap_or(0) as f64
            })
            .sum();
        TerminalValues(v)
    }

    /// Single terminal for a pair or group.
    pub fn terminal_value(&self, id: TerminalId, group: &[Pair]) -> f64 {
        let mut mask = TerminalMask::default();
        mask.insert(id);
        self.group_values(group, mask).get(id)
    }
}
