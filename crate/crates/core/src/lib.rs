//! Knee-point guided group selection for dynamic multi-mode project scheduling.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: project instances, schedules, critical-path bound, feasibility checker.
//! * [`instgen`]: seeded random instance generator with order-strength targeting.
//! * [`rules`]: GP expression trees, the terminal set and its group adaptation.
//! * [`sim`]: time-stepped execution of a project under a decision policy.
//! * [`policy`]: sequential, full-enumeration and knee-point group policies.
//! * [`evolve`]: multi-tree genetic programming over rule pairs.
//! * [`experiment`]: experiment orchestration, statistics and report files.

pub mod bitset;
pub mod evolve;
pub mod experiment;
pub mod fixtures;
pub mod instgen;
pub mod model;
pub mod policy;
pub mod rules;
pub mod seeds;
pub mod sim;

pub use model::{validate_schedule, cpm_lower_bound, ProjectInstance, Schedule};
pub use policy::{DecisionPolicy, KneeConfig, PolicyKind};
pub use rules::{ExprTree, Pair, RulePair, TerminalId};
pub use sim::{sample_durations, solve, DurationTable, SimResult};
