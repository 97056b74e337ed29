//! Shared inputs for the benchmarks.

use kneesched_core::instgen::{generate_instance, GenSpec};
use kneesched_core::ProjectInstance;

pub use kneesched_core::RulePair;

/// A generated instance with `n` activities, 3 modes and 4 resources.
pub fn instance(n: usize, os: f64, seed: u64) -> ProjectInstance {
    generate_instance(&GenSpec::standard(os, 4, seed).with_size(n, 3)).expect("benchmark spec is valid")
}

/// A hand-written rule pair in the spirit of evolved ones.
pub fn rules() -> RulePair {
    "ordering: (add LFT (mul ExpDur (div MaxRR AvgRA)))\ngroup: (sub (div EFT GRPW_all) RR)"
        .parse()
        .expect("rule text is valid")
}
