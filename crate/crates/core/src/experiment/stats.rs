//! Two-sided Wilcoxon rank-sum (Mann-Whitney U) test and sample summaries.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Better,
    Worse,
    Similar,
}

impl Verdict {
    /// Table marker: `↑` better, `↓` worse, `≈` similar.
    pub fn marker(self) -> &'static str {
        match self {
            Verdict::Better => "↑",
            Verdict::Worse => "↓",
            Verdict::Similar => "≈",
        }
    }

    pub fn flip(self) -> Verdict {
        match self {
            Verdict::Better => Verdict::Worse,
            Verdict::Worse => Verdict::Better,
            Verdict::Similar => Verdict::Similar,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    /// Mann-Whitney U of the first sample.
    pub statistic: f64,
    pub p_value: f64,
    /// Verdict for the first sample; lower values are better.
    pub verdict: Verdict,
}

/// Below this smaller-sample size the null distribution is enumerated exactly.
pub const EXACT_BELOW: usize = 8;

/// Midranks of the pooled sample, doubled so that they are integers.
fn doubled_ranks(pooled: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pooled[idx[j + 1]] == pooled[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean; doubled: i + j + 2.
        for &k in &idx[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Exact two-sided p-value: the share of `k`-subsets of the pooled doubled
/// ranks whose sum lies at least as far from its mean as `observed`.
fn exact_p(ranks: &[u64], k: usize, observed: u64) -> f64 {
    let max_sum: u64 = ranks.iter().sum();
    let width = max_sum as usize + 1;
    let mut ways = vec![vec![0f64; width]; k + 1];
    ways[0][0] = 1.0;
    for &r in ranks {
        for j in (1..=k).rev() {
            let (lo, hi) = ways.split_at_mut(j);
            let (prev, cur) = (&lo[j - 1], &mut hi[0]);
            for s in (r as usize..width).rev() {
                cur[s] += prev[s - r as usize];
            }
        }
    }
    let n = ranks.len() as u64;
    let mean = k as u64 * (n + 1);
    let dev = |s: u64| s.abs_diff(mean);
    let obs = dev(observed);
    let total: f64 = ways[k].iter().sum();
    let tail: f64 = ways[k].iter().enumerate().filter(|(s, _)| dev(*s as u64) >= obs).map(|(_, w)| w).sum();
    (tail / total).min(1.0)
}

/// Two-sided rank-sum test of `a` against `b`. Normal approximation with
/// tie and continuity correction when both samples have at least
/// [`EXACT_BELOW`] values, exact enumeration otherwise.
///
/// # Panics
/// If either sample has fewer than two values.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64], alpha: f64) -> RankSumResult {
    assert!(a.len() >= 2 && b.len() >= 2, "rank-sum test needs at least two values per sample");
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_ranks(&pooled);
    let w_a: u64 = ranks[..n1].iter().sum();
    let u_a = w_a as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;

    let p_value = if pooled.iter().all(|&x| x == pooled[0]) {
        1.0
    } else if n1.min(n2) < EXACT_BELOW {
        exact_p(&ranks, n1, w_a)
    } else {
        let mu = (n1 * n2) as f64 / 2.0;
        let mut ties: Vec<u64> = ranks.clone();
        ties.sort_unstable();
        let tie_term: f64 = ties
            .chunk_by(|x, y| x == y)
            .map(|g| {
                let t = g.len() as f64;
                t * t * t - t
            })
            .sum();
        let var = (n1 * n2) as f64 / 12.0 * ((n + 1) as f64 - tie_term / (n * (n - 1)) as f64);
        if var <= 0.0 {
            1.0
        } else {
            let z = ((u_a - mu).abs() - 0.5).max(0.0) / var.sqrt();
            erfc(z / std::f64::consts::SQRT_2).min(1.0)
        }
    };

    let verdict = if p_value < alpha {
        let (ma, mb) = (median(a), median(b));
        let mean_rank_a = w_a as f64 / n1 as f64;
        let mean_rank_b = ranks[n1..].iter().sum::<u64>() as f64 / n2 as f64;
        if ma < mb || (ma == mb && mean_rank_a < mean_rank_b) {
            Verdict::Better
        } else if ma > mb || mean_rank_a > mean_rank_b {
            Verdict::Worse
        } else {
            Verdict::Similar
        }
    } else {
        Verdict::Similar
    };
    RankSumResult { statistic: u_a, p_value, verdict }
}

/// Mean and sample standard deviation (n − 1); std is 0 for one value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
