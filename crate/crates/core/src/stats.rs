//! Mann-Whitney rank-sum comparison, Bonferroni correction and per
//! configuration summaries.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::cmp::Ordering;

/// Below this combined sample size p-values come from exact enumeration.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U of the first sample.
    pub u_a: f64,
    /// U of the second sample; `u_a + u_b = |a|·|b|`.
    pub u_b: f64,
    pub p_two_sided: f64,
    pub method: PMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Better,
    Worse,
    Indifferent,
}

impl Verdict {
    pub fn symbol(self) -> &'static str {
        match self {
            Verdict::Better => "+",
            Verdict::Worse => "-",
            Verdict::Indifferent => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonResult {
    pub u_statistic: f64,
    pub p_two_sided: f64,
    /// Per-comparison significance level after correction.
    pub alpha: f64,
    pub verdict: Verdict,
}

/// Midranks (1-based) of the pooled sample, in pooled order `a ++ b`.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

struct Ranked {
    na: usize,
    nb: usize,
    ranks: Vec<f64>,
    ties: Vec<usize>,
    u_a: f64,
}

fn rank(a: &[f64], b: &[f64]) -> Ranked {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let na = a.len();
    let rank_sum_a: f64 = ranks[..na].iter().sum();
    let u_a = rank_sum_a - (na * (na + 1)) as f64 / 2.0;
    Ranked {
        na,
        nb: b.len(),
        ranks,
        ties,
        u_a,
    }
}

/// Two-sided Mann-Whitney U test.
///
/// Exact enumeration of the (tie-aware) null distribution when
/// `|a| + |b| < 20`, otherwise the normal approximation with tie and
/// continuity corrections. Panics on an empty sample.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> MannWhitney {
    assert!(!a.is_empty() && !b.is_empty(), "both samples must be non-empty");
    let r = rank(a, b);
    let method = if r.na + r.nb < EXACT_LIMIT {
        PMethod::Exact
    } else {
        PMethod::Normal
    };
    let p = match method {
        PMethod::Exact => exact_p(&r),
        PMethod::Normal => normal_p(&r),
    };
    MannWhitney {
        u_a: r.u_a,
        u_b: (r.na * r.nb) as f64 - r.u_a,
        p_two_sided: p,
        method,
    }
}

/// Exact two-sided p-value regardless of sample size.
pub fn mann_whitney_exact_p(a: &[f64], b: &[f64]) -> f64 {
    exact_p(&rank(a, b))
}

/// Normal-approximation p-value regardless of sample size.
pub fn mann_whitney_normal_p(a: &[f64], b: &[f64]) -> f64 {
    normal_p(&rank(a, b))
}

fn exact_p(r: &Ranked) -> f64 {
    if r.ties.len() == 1 {
        return 1.0;
    }
    let n = r.na + r.nb;
    // Midranks are multiples of 1/2, so doubled ranks are integers.
    let doubled: Vec<usize> = r.ranks.iter().map(|v| (v * 2.0).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    let k = r.na.min(r.nb);
    // counts[j][s]: subsets of size j with doubled rank sum s
    let mut counts = vec![vec![0.0f64; max_sum + 1]; k + 1];
    counts[0][0] = 1.0;
    let mut sorted = doubled;
    sorted.sort_unstable();
    for &w in &sorted {
        for j in (1..=k).rev() {
            let (lo, hi) = counts.split_at_mut(j);
            for s in (w..=max_sum).rev() {
                hi[0][s] += lo[j - 1][s - w];
            }
        }
    }
    let mean = (r.na * r.nb) as f64 / 2.0;
    let observed = (r.u_a - mean).abs();
    let offset = (k * (k + 1)) as f64 / 2.0;
    let mut extreme = 0.0;
    let mut total = 0.0;
    for (s, &c) in counts[k].iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        total += c;
        let u = s as f64 / 2.0 - offset;
        if (u - mean).abs() >= observed - 1e-9 {
            extreme += c;
        }
    }
    debug_assert!(total > 0.0 && n > 0);
    (extreme / total).min(1.0)
}

fn normal_p(r: &Ranked) -> f64 {
    let n = (r.na + r.nb) as f64;
    let prod = (r.na * r.nb) as f64;
    let mean = prod / 2.0;
    let tie_term: f64 = r
        .ties
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = prod / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var.is_nan() || var <= 0.0 {
        return 1.0;
    }
    let z = ((r.u_a - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Per-comparison level under Bonferroni correction for `m` comparisons.
pub fn bonferroni(alpha: f64, m: usize) -> f64 {
    assert!(m >= 1, "at least one comparison");
    alpha / m as f64
}

/// Tests candidate runs against baseline runs (testing R² values).
pub fn compare_vs_baseline(cfg_runs: &[f64], base_runs: &[f64], alpha: f64, m: usize) -> ComparisonResult {
    let mw = mann_whitney_u(cfg_runs, base_runs);
    let level = bonferroni(alpha, m);
    let verdict = if mw.p_two_sided <= level {
        match median(cfg_runs).total_cmp(&median(base_runs)) {
            Ordering::Greater => Verdict::Better,
            Ordering::Less => Verdict::Worse,
            Ordering::Equal => Verdict::Indifferent,
        }
    } else {
        Verdict::Indifferent
    };
    ComparisonResult {
        u_statistic: mw.u_a,
        p_two_sided: mw.p_two_sided,
        alpha: level,
        verdict,
    }
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n.is_multiple_of(2) {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    } else {
        sorted[n / 2]
    }
}

fn extremes(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// The numbers the summary tables need from a single run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub train_r2: f64,
    pub test_r2: f64,
    pub lcf_ratio: f64,
    pub mean_depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub median: f64,
    pub max: f64,
    pub min: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Self {
        let (min, max) = extremes(values);
        Spread {
            median: median(values),
            max,
            min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub train: Spread,
    pub test: Spread,
    pub mean_lcf_ratio: f64,
    pub mean_depth: f64,
    pub runs: usize,
}

pub fn summarize(runs: &[RunMetrics]) -> Summary {
    assert!(!runs.is_empty(), "summary of zero runs");
    let col = |f: fn(&RunMetrics) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Summary {
        train: Spread::of(&col(|r| r.train_r2)),
        test: Spread::of(&col(|r| r.test_r2)),
        mean_lcf_ratio: mean(col(|r| r.lcf_ratio)),
        mean_depth: mean(col(|r| r.mean_depth)),
        runs: runs.len(),
    }
}
