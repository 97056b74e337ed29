//! Heuristic rules: GP expression trees evaluated against decision contexts.

mod terminals;
mod tree;

use std::fmt;
use std::str::FromStr;

pub use terminals::{
    Adaptation, DecisionContext, Pair, RunningActivity, TerminalId, TerminalMask, TerminalValues, N_TERMINALS,
};
pub use tree::{ExprTree, Func, ParseError};

/// Priority of a single pair under the ordering tree; smaller is better.
pub fn eval_pair_priority(tree: &ExprTree, ctx: &DecisionContext, pair: Pair) -> f64 {
    tree.eval(&ctx.pair_values(pair, tree.terminal_mask()))
}

/// Priority of a group under the group tree; smaller is better.
pub fn eval_group_priority(tree: &ExprTree, ctx: &DecisionContext, group: &[Pair]) -> f64 {
    tree.eval(&ctx.group_values(group, tree.terminal_mask()))
}

/// One GP individual: an ordering rule and a group priority rule.
///
/// Sequential individuals carry no group rule; full-enumeration individuals
/// carry no ordering rule.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RulePair {
    pub ordering: Option<ExprTree>,
    pub group: Option<ExprTree>,
}

impl RulePair {
    pub fn new(ordering: ExprTree, group: ExprTree) -> Self {
        RulePair { ordering: Some(ordering), group: Some(group) }
    }

    pub fn ordering_only(ordering: ExprTree) -> Self {
        RulePair { ordering: Some(ordering), group: None }
    }

    pub fn group_only(group: ExprTree) -> Self {
        RulePair { ordering: None, group: Some(group) }
    }

    /// Node counts of the ordering and group trees (0 for an absent tree).
    pub fn sizes(&self) -> (usize, usize) {
        (
            self.ordering.as_ref().map_or(0, ExprTree::size),
            self.group.as_ref().map_or(0, ExprTree::size),
        )
    }

    pub fn trees(&self) -> impl Iterator<Item = &ExprTree> {
        self.ordering.iter().chain(self.group.iter())
    }
}

/// Rule file layout: one `ordering:` and/or one `group:` line.
impl fmt::Display for RulePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(o) = &self.ordering {
            writeln!(f, "ordering: {o}")?;
        }
        if let Some(g) = &self.group {
            writeln!(f, "group: {g}")?;
        }
        Ok(())
    }
}

impl FromStr for RulePair {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, ParseError> {
        let mut pair = RulePair { ordering: None, group: None };
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            if let Some(rest) = line.strip_prefix("ordering:") {
                pair.ordering = Some(rest.trim().parse()?);
            } else if let Some(rest) = line.strip_prefix("group:") {
                pair.group = Some(rest.trim().parse()?);
            } else {
                return Err(ParseError::UnexpectedToken(line.to_owned()));
            }
        }
        if pair.ordering.is_none() && pair.group.is_none() {
            return Err(ParseError::MissingRole("ordering"));
        }
        Ok(pair)
    }
}
