//! Small hand-built instances used by tests, benches and the CLI demo.

use std::collections::BTreeMap;

use crate::model::{ActivityRecord, Metadata, Mode, ProjectInstance, ResourceVector, Schedule, ScheduledActivity};

/// The seven-activity, two-mode, single-resource example project.
///
/// Ids are 0-based: paper activity `k` is id `k - 1`, and paper mode `m` is
/// mode index `m - 1`. Capacity of R1 is 12.
pub fn example_project() -> ProjectInstance {
    let modes = |rows: &[(u32, u32, u32, u32)]| -> Vec<Mode> {
        rows.iter().map(|&(e, lo, hi, k)| Mode::new(e, lo, hi, vec![k])).collect()
    };
    let records = vec![
        ActivityRecord { id: 0, predecessors: vec![], modes: vec![Mode::dummy(1)] },
        ActivityRecord { id: 1, predecessors: vec![0], modes: modes(&[(5, 3, 7, 10), (6, 5, 8, 6)]) },
        ActivityRecord { id: 2, predecessors: vec![0], modes: modes(&[(4, 3, 7, 7), (7, 6, 11, 5)]) },
        ActivityRecord { id: 3, predecessors: vec![1], modes: modes(&[(4, 3, 6, 9), (8, 7, 10, 8)]) },
        ActivityRecord { id: 4, predecessors: vec![1, 2], modes: modes(&[(4, 2, 5, 7), (6, 4, 8, 4)]) },
        ActivityRecord { id: 5, predecessors: vec![3], modes: modes(&[(3, 2, 5, 9), (5, 4, 7, 6)]) },
        ActivityRecord { id: 6, predecessors: vec![4, 5], modes: vec![Mode::dummy(1)] },
    ];
    let metadata = Metadata { name: Some("example-7".into()), ..Metadata::default() };
    ProjectInstance::new(records, ResourceVector(vec![12]), metadata).expect("example project is valid")
}

/// Expected-duration schedule of the example built one pair at a time (makespan 20).
pub fn sequential_schedule() -> Schedule {
    schedule(&[(1, 0, 0, 5), (2, 0, 5, 4), (3, 0, 9, 4), (4, 0, 13, 4), (5, 0, 17, 3)])
}

/// Expected-duration schedule of the example built from group decisions (makespan 17).
pub fn group_schedule() -> Schedule {
    schedule(&[(1, 1, 0, 6), (2, 1, 0, 7), (3, 0, 7, 4), (4, 1, 11, 6), (5, 1, 11, 5)])
}

fn schedule(rows: &[(usize, usize, u32, u32)]) -> Schedule {
    let entries: BTreeMap<_, _> = rows
        .iter()
        .map(|&(id, mode, start, duration)| (id, ScheduledActivity { mode, start, duration }))
        .collect();
    Schedule::from_entries(entries)
}

/// A serial chain of single-mode activities with the given expected durations
/// and zero spread, one resource of capacity 1, each activity demanding 1.
pub fn chain(durations: &[u32]) -> ProjectInstance {
    let n = durations.len() + 2;
    let mut records = vec![ActivityRecord { id: 0, predecessors: vec![], modes: vec![Mode::dummy(1)] }];
    for (i, &d) in durations.iter().enumerate() {
        records.push(ActivityRecord { id: i + 1, predecessors: vec![i], modes: vec![Mode::new(d, d, d, vec![1])] });
    }
    records.push(ActivityRecord { id: n - 1, predecessors: vec![n - 2], modes: vec![Mode::dummy(1)] });
    ProjectInstance::new(records, ResourceVector(vec![1]), Metadata::default()).expect("chain is valid")
}

/// Five mutually independent activities A..E with two modes each, one
/// resource of capacity 10. Used to replay the knee-point group selection
/// walkthrough: ranking by expected duration gives B1 < D1 < C2 < A < E,
/// the knee falls on C2, and {B1, C2, D1} needs 12 > 10 units.
///
/// Ids: A=1, B=2, C=3, D=4, E=5. Mode index 0 is "mode 1".
pub fn knee_walkthrough() -> ProjectInstance {
    let m = |e: u32, k: u32| Mode::new(e, e, e, vec![k]);
    let mut records = vec![ActivityRecord { id: 0, predecessors: vec![], modes: vec![Mode::dummy(1)] }];
    let table = [
        (m(10, 3), m(12, 2)), // A
        (m(2, 4), m(13, 3)),  // B
        (m(14, 5), m(4, 4)),  // C
        (m(3, 4), m(15, 3)),  // D
        (m(11, 3), m(16, 2)), // E
    ];
    for (i, (m1, m2)) in table.into_iter().enumerate() {
        records.push(ActivityRecord { id: i + 1, predecessors: vec![0], modes: vec![m1, m2] });
    }
    records.push(ActivityRecord { id: 6, predecessors: (1..=5).collect(), modes: vec![Mode::dummy(1)] });
    ProjectInstance::new(records, ResourceVector(vec![10]), Metadata::default()).expect("walkthrough is valid")
}
