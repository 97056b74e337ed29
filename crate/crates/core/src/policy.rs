//! Decision policies that pick which eligible activity-mode pairs start now.
//!
//! * [`sequential_decide`]: one pair per call, the best under the ordering rule.
//! * [`knee_group_decide`]: rank with the ordering rule, keep one mode per
//!   activity, cut the ranking at its knee, enumerate subsets of what is
//!   left and pick the best feasible group under the group rule.
//! * [`full_enumeration_decide`]: every combination of activities and modes
//!   in the eligible set, scored by the group rule.
//!
//! All rules use "smaller is better", and ties are broken by activity id
//! (then mode index) ascending.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ResourceVector;
use crate::rules::{eval_group_priority, eval_pair_priority, DecisionContext, ExprTree, Pair, RulePair};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("full enumeration needs {count} combinations, above the limit of {limit}")]
    EnumerationOverflow { count: u128, limit: u64 },
    #[error("policy `{policy}` needs a {role} rule")]
    MissingRule { policy: PolicyKind, role: &'static str },
}

/// Outcome of one policy call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Decision {
    /// Pairs to start now, sorted by activity id; empty means "wait".
    pub group: Vec<Pair>,
    /// Pairs that survived filtering before combination (the promising set
    /// for knee selection; the eligible set otherwise).
    pub filtered_size: usize,
    /// Candidate groups or assignments considered.
    pub candidates: u64,
}

pub trait DecisionPolicy {
    fn decide(&self, ctx: &DecisionContext, eligible: &[Pair]) -> Result<Decision, PolicyError>;
}

/// Scripted policies: any closure from context and eligible set to a group.
impl<F> DecisionPolicy for F
where
    F: Fn(&DecisionContext, &[Pair]) -> Vec<Pair>,
{
    fn decide(&self, ctx: &DecisionContext, eligible: &[Pair]) -> Result<Decision, PolicyError> {
        let mut group = self(ctx, eligible);
        group.sort();
        Ok(Decision { group, filtered_size: eligible.len(), candidates: 1 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "sgp")]
    Sgp,
    #[serde(rename = "ggp")]
    Ggp,
    #[serde(rename = "kggp-max")]
    KggpMax,
    #[serde(rename = "kggp-all")]
    KggpAll,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Sgp, PolicyKind::Ggp, PolicyKind::KggpMax, PolicyKind::KggpAll];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Sgp => "sgp",
            PolicyKind::Ggp => "ggp",
            PolicyKind::KggpMax => "kggp-max",
            PolicyKind::KggpAll => "kggp-all",
        }
    }

    pub fn uses_ordering(self) -> bool {
        self != PolicyKind::Ggp
    }

    pub fn uses_group(self) -> bool {
        self != PolicyKind::Sgp
    }

    /// Builds the policy for `rules`. The knee config's `retain_maximal_only`
    /// is overridden by the kind.
    pub fn build<'r>(self, rules: &'r RulePair, knee: &KneeConfig) -> Result<RulePolicy<'r>, PolicyError> {
        let ordering = || rules.ordering.as_ref().ok_or(PolicyError::MissingRule { policy: self, role: "ordering" });
        let group = || rules.group.as_ref().ok_or(PolicyError::MissingRule { policy: self, role: "group" });
        Ok(match self {
            PolicyKind::Sgp => RulePolicy::Sequential { ordering: ordering()? },
            PolicyKind::Ggp => RulePolicy::FullEnumeration { group: group()?, hard_limit: knee.group_limit },
            PolicyKind::KggpMax | PolicyKind::KggpAll => RulePolicy::KneeGroup {
                ordering: ordering()?,
                group: group()?,
                cfg: KneeConfig { retain_maximal_only: self == PolicyKind::KggpMax, ..knee.clone() },
            },
        })
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown policy `{s}` (expected sgp, ggp, kggp-max or kggp-all)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KneeConfig {
    /// Maximum number of promising pairs kept after knee selection.
    pub cap: usize,
    /// Drop groups that are strict subsets of other feasible groups.
    pub retain_maximal_only: bool,
    /// Upper bound on enumerated combinations. Full enumeration fails above
    /// it; knee selection shrinks the promising set to stay below it.
    pub group_limit: u64,
    /// When false the knee cut is skipped and every ranked pair (up to `cap`) is kept.
    pub use_knee: bool,
}

impl Default for KneeConfig {
    fn default() -> Self {
        KneeConfig { cap: 10, retain_maximal_only: true, group_limit: 1_000_000, use_knee: true }
    }
}

#[derive(Clone, Debug)]
pub enum RulePolicy<'r> {
    Sequential { ordering: &'r ExprTree },
    KneeGroup { ordering: &'r ExprTree, group: &'r ExprTree, cfg: KneeConfig },
    FullEnumeration { group: &'r ExprTree, hard_limit: u64 },
}

impl DecisionPolicy for RulePolicy<'_> {
    fn decide(&self, ctx: &DecisionContext, eligible: &[Pair]) -> Result<Decision, PolicyError> {
        match self {
            RulePolicy::Sequential { ordering } => Ok(sequential_decide(ordering, ctx, eligible)),
            RulePolicy::KneeGroup { ordering, group, cfg } => Ok(knee_group_decide(ordering, group, ctx, eligible, cfg)),
            RulePolicy::FullEnumeration { group, hard_limit } => full_enumeration_decide(group, ctx, eligible, *hard_limit),
        }
    }
}

fn by_priority(a: &(Pair, f64), b: &(Pair, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0))
}

/// Starts the single best pair under `ordering`.
pub fn sequential_decide(ordering: &ExprTree, ctx: &DecisionContext, eligible: &[Pair]) -> Decision {
    let best = eligible
        .iter()
        .filter(|p| ctx.instance().mode(p.activity, p.mode).demand.fits_within(ctx.availability()))
        .map(|&p| (p, eval_pair_priority(ordering, ctx, p)))
        .min_by(by_priority);
    Decision {
        group: best.map(|(p, _)| vec![p]).unwrap_or_default(),
        filtered_size: eligible.len(),
        candidates: eligible.len() as u64,
    }
}

/// Index of the knee on an ascending priority curve, or `None` when the
/// curve has fewer than three points or is flat.
///
/// Rank and priority are both min-max normalized to [0, 1]; the knee is the
/// point farthest from the chord joining the first and last points. Ties go
/// to the smallest rank.
pub fn knee_index(priorities: &[f64]) -> Option<usize> {
    let n = priorities.len();
    if n <= 2 {
        return None;
    }
    let lo = priorities[0];
    let hi = priorities[n - 1];
    // Halved to keep the span finite for values near ±f64::MAX.
    let span = 0.5 * hi - 0.5 * lo;
    if !(span > 0.0) {
        return None;
    }
    let mut best = 0;
    let mut best_dist = f64::NEG_INFINITY;
    for (k, &p) in priorities.iter().enumerate() {
        let x = k as f64 / (n - 1) as f64;
        let y = (0.5 * p - 0.5 * lo) / span;
        let d = (x - y).abs();
        if d > best_dist {
            best_dist = d;
            best = k;
        }
    }
    Some(best)
}

/// Number of leading pairs kept as promising: everything up to and
/// including the knee's priority value, at most `cap`.
pub fn knee_select(priorities: &[f64], cap: usize) -> usize {
    let keep = match knee_index(priorities) {
        None => priorities.len(),
        Some(k) => {
            let knee_value = priorities[k];
            priorities.iter().take_while(|&&p| p <= knee_value).count()
        }
    };
    keep.min(cap)
}

/// Scores every pair with `ordering` and keeps the best mode of each
/// activity, sorted by ascending priority.
pub fn rank_best_modes(ordering: &ExprTree, ctx: &DecisionContext, eligible: &[Pair]) -> Vec<(Pair, f64)> {
    let mut scored: Vec<(Pair, f64)> = eligible.iter().map(|&p| (p, eval_pair_priority(ordering, ctx, p))).collect();
    scored.sort_by(by_priority);
    let mut seen = crate::bitset::BitSet::new(ctx.instance().len());
    scored.retain(|(p, _)| {
        if seen.contains(p.activity) {
            false
        } else {
            seen.insert(p.activity);
            true
        }
    });
    scored
}

fn lexicographic(a: &[Pair], b: &[Pair]) -> Ordering {
    a.iter()
        .map(|p| p.activity)
        .cmp(b.iter().map(|p| p.activity))
        .then_with(|| a.iter().map(|p| p.mode).cmp(b.iter().map(|p| p.mode)))
}

/// Knee-point guided group selection.
pub fn knee_group_decide(
    ordering: &ExprTree,
    group_rule: &ExprTree,
    ctx: &DecisionContext,
    eligible: &[Pair],
    cfg: &KneeConfig,
) -> Decision {
    let ranked = rank_best_modes(ordering, ctx, eligible);
    let priorities: Vec<f64> = ranked.iter().map(|(_, s)| *s).collect();
    let mut k = if cfg.use_knee { knee_select(&priorities, cfg.cap) } else { ranked.len().min(cfg.cap) };
    k = k.max(1).min(ranked.len());
    while k > 1 && (1u64 << k.min(63)) - 1 > cfg.group_limit {
        k -= 1;
    }
    let promising: Vec<Pair> = ranked[..k].iter().map(|(p, _)| *p).collect();
    if promising.is_empty() {
        return Decision::default();
    }

    let inst = ctx.instance();
    let avail = ctx.availability();
    let demands: Vec<&ResourceVector> = promising.iter().map(|p| &inst.mode(p.activity, p.mode).demand).collect();
    let n_masks = 1usize << k;
    let mut feasible = vec![false; n_masks];
    let mut load = vec![0u32; avail.len()];
    for mask in 1..n_masks {
        load.iter_mut().for_each(|l| *l = 0);
        for (j, d) in demands.iter().enumerate() {
            if mask & (1 << j) != 0 {
                for (l, v) in load.iter_mut().zip(d.iter()) {
                    *l += v;
                }
            }
        }
        feasible[mask] = load.iter().zip(avail.iter()).all(|(l, a)| *l <= a);
    }
    let survivors: Vec<usize> = (1..n_masks)
        .filter(|&m| feasible[m])
        .filter(|&m| !cfg.retain_maximal_only || (0..k).all(|j| m & (1 << j) != 0 || !feasible[m | (1 << j)]))
        .collect();
    if survivors.is_empty() {
        let mut fallback = sequential_decide(ordering, ctx, &promising);
        fallback.filtered_size = k;
        return fallback;
    }

    let mut best: Option<(f64, Vec<Pair>)> = None;
    for &mask in &survivors {
        let mut group: Vec<Pair> = (0..k).filter(|j| mask & (1 << j) != 0).map(|j| promising[j]).collect();
        group.sort();
        let score = eval_group_priority(group_rule, ctx, &group);
        let better = match &best {
            None => true,
            Some((s, g)) => score.total_cmp(s).then_with(|| lexicographic(&group, g)) == Ordering::Less,
        };
        if better {
            best = Some((score, group));
        }
    }
    Decision { group: best.map(|(_, g)| g).unwrap_or_default(), filtered_size: k, candidates: survivors.len() as u64 }
}

/// `prod(m_i + 1) - 1` over the eligible activities, where `m_i` is the
/// number of eligible modes of activity `i`.
pub fn enumeration_count(eligible: &[Pair]) -> u128 {
    group_by_activity(eligible)
        .iter()
        .fold(1u128, |acc, modes| acc.saturating_mul(modes.len() as u128 + 1))
        - 1
}

fn group_by_activity(eligible: &[Pair]) -> Vec<Vec<Pair>> {
    let mut sorted = eligible.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut out: Vec<Vec<Pair>> = Vec::new();
    for p in sorted {
        match out.last_mut() {
            Some(last) if last[0].activity == p.activity => last.push(p),
            _ => out.push(vec![p]),
        }
    }
    out
}

struct Enumerator<'a, 'c> {
    rule: &'a ExprTree,
    ctx: &'a DecisionContext<'c>,
    options: Vec<Vec<Pair>>,
    /// suffix[j] = prod over l >= j of (modes_l + 1).
    suffix: Vec<u64>,
    group: Vec<Pair>,
    load: Vec<u32>,
    enumerated: u64,
    scored: u64,
    best: Option<(f64, Vec<Pair>)>,
}

impl Enumerator<'_, '_> {
    fn walk(&mut self, j: usize) {
        if j == self.options.len() {
            if !self.group.is_empty() {
                self.enumerated += 1;
                self.scored += 1;
                let score = eval_group_priority(self.rule, self.ctx, &self.group);
                let better = match &self.best {
                    None => true,
                    Some((s, g)) => score.total_cmp(s).then_with(|| lexicographic(&self.group, g)) == Ordering::Less,
                };
                if better {
                    self.best = Some((score, self.group.clone()));
                }
            }
            return;
        }
        self.walk(j + 1);
        let avail = self.ctx.availability();
        for mi in 0..self.options[j].len() {
            let p = self.options[j][mi];
            let demand = &self.ctx.instance().mode(p.activity, p.mode).demand;
            let fits = self.load.iter().zip(demand.iter()).zip(avail.iter()).all(|((l, d), a)| l + d <= a);
            if !fits {
                // Every completion of this partial assignment is infeasible too.
                self.enumerated += self.suffix[j + 1];
                continue;
            }
            for (l, d) in self.load.iter_mut().zip(demand.iter()) {
                *l += d;
            }
            self.group.push(p);
            self.walk(j + 1);
            self.group.pop();
            for (l, d) in self.load.iter_mut().zip(demand.iter()) {
                *l -= d;
            }
        }
    }
}

/// Exhaustive group selection over every activity/mode combination.
///
/// Partial assignments that already exceed availability are pruned; the
/// assignments they cover are still counted, so `candidates` always equals
/// [`enumeration_count`].
pub fn full_enumeration_decide(
    group_rule: &ExprTree,
    ctx: &DecisionContext,
    eligible: &[Pair],
    hard_limit: u64,
) -> Result<Decision, PolicyError> {
    let count = enumeration_count(eligible);
    if count > hard_limit as u128 {
        return Err(PolicyError::EnumerationOverflow { count, limit: hard_limit });
    }
    let options = group_by_activity(eligible);
    let mut suffix = vec![1u64; options.len() + 1];
    for j in (0..options.len()).rev() {
        suffix[j] = suffix[j + 1] * (options[j].len() as u64 + 1);
    }
    let mut e = Enumerator {
        rule: group_rule,
        ctx,
        options,
        suffix,
        group: Vec::new(),
        load: vec![0; ctx.availability().len()],
        enumerated: 0,
        scored: 0,
        best: None,
    };
    e.walk(0);
    debug_assert_eq!(e.enumerated as u128, count);
    log::trace!("full enumeration: {} assignments, {} feasible", e.enumerated, e.scored);
    Ok(Decision {
        group: e.best.map(|(_, g)| g).unwrap_or_default(),
        filtered_size: eligible.len(),
        candidates: e.enumerated,
    })
}
