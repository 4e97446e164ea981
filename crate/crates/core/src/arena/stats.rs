use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EpisodeReport, Method};

/// Pooled sizes up to this use the exact permutation distribution.
pub const EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    pub u_x: f64,
    pub u_y: f64,
    pub p_two_sided: f64,
    /// One-sided p for `x` tending to exceed `y`.
    pub p_greater: f64,
    /// One-sided p for `x` tending to fall below `y`.
    pub p_less: f64,
    pub exact: bool,
}

/// Ranks from 1 with ties given their mean rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn for_each_subset_sum(ranks: &[f64], k: usize, f: &mut impl FnMut(f64)) {
    fn go(ranks: &[f64], start: usize, left: usize, acc: f64, f: &mut impl FnMut(f64)) {
        if left == 0 {
            f(acc);
            return;
        }
        for i in start..=ranks.len() - left {
            go(ranks, i + 1, left - 1, acc + ranks[i], f);
        }
    }
    go(ranks, 0, k, 0.0, f);
}

/// `(U_x, two-sided p)`; see [`mann_whitney`] for the full result.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> (f64, f64) {
    let r = mann_whitney(x, y);
    (r.u_x, r.p_two_sided)
}

/// Mann-Whitney U test with midranks for ties. Exact when the pooled sample
/// has at most [`EXACT_MAX_N`] values, otherwise normal with tie and
/// continuity corrections.
///
/// # Panics
/// If either sample is empty.
pub fn mann_whitney(x: &[f64], y: &[f64]) -> MannWhitney {
    assert!(!x.is_empty() && !y.is_empty(), "Mann-Whitney needs two non-empty samples");
    let (nx, ny) = (x.len(), y.len());
    let n = nx + ny;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let offset = (nx * (nx + 1)) as f64 / 2.0;
    let u_x = ranks[..nx].iter().sum::<f64>() - offset;
    let u_y = (nx * ny) as f64 - u_x;
    let mean = (nx * ny) as f64 / 2.0;

    if n <= EXACT_MAX_N {
        let tol = 1e-9;
        let dev = (u_x - mean).abs();
        let (mut total, mut two, mut ge, mut le) = (0u64, 0u64, 0u64, 0u64);
        for_each_subset_sum(&ranks, nx, &mut |s| {
            let u = s - offset;
            total += 1;
            two += u64::from((u - mean).abs() >= dev - tol);
            ge += u64::from(u >= u_x - tol);
            le += u64::from(u <= u_x + tol);
        });
        let t = total as f64;
        return MannWhitney {
            u_x,
            u_y,
            p_two_sided: two as f64 / t,
            p_greater: ge as f64 / t,
            p_less: le as f64 / t,
            exact: true,
        };
    }

    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for v in &pooled {
        *counts.entry(v.to_bits()).or_default() += 1;
    }
    let ties: f64 = counts.values().map(|&t| (t * t * t - t) as f64).sum();
    let nf = n as f64;
    let var = (nx * ny) as f64 / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
    if !(var > 0.0) {
        return MannWhitney {
            u_x,
            u_y,
            p_two_sided: 1.0,
            p_greater: 1.0,
            p_less: 1.0,
            exact: false,
        };
    }
    let sd = var.sqrt();
    let upper = |z: f64| 0.5 * libm::erfc(z / std::f64::consts::SQRT_2);
    let z_two = (((u_x - mean).abs() - 0.5) / sd).max(0.0);
    MannWhitney {
        u_x,
        u_y,
        p_two_sided: (2.0 * upper(z_two)).min(1.0),
        p_greater: upper((u_x - mean - 0.5) / sd),
        p_less: upper(-(u_x - mean + 0.5) / sd),
        exact: false,
    }
}

/// Median and quartiles by linear interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Summary {
            n: v.len(),
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub a: Summary,
    pub b: Summary,
    pub test: MannWhitney,
}

/// One unordered method pair; `a` precedes `b` in method order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub a: Method,
    pub b: Method,
    pub score: MetricComparison,
    pub intensity: MetricComparison,
}

pub fn compare_methods(reports: &BTreeMap<Method, Vec<EpisodeReport>>) -> Vec<ComparisonRow> {
    let metric = |rs: &[EpisodeReport], f: fn(&EpisodeReport) -> f64| rs.iter().map(f).collect::<Vec<f64>>();
    let methods: Vec<&Method> = reports.keys().collect();
    let mut rows = Vec::new();
    for (i, &a) in methods.iter().enumerate() {
        for &b in &methods[i + 1..] {
            let compare = |f: fn(&EpisodeReport) -> f64| {
                let (xa, xb) = (metric(&reports[a], f), metric(&reports[b], f));
                MetricComparison {
                    a: Summary::of(&xa),
                    b: Summary::of(&xb),
                    test: mann_whitney(&xa, &xb),
                }
            };
            rows.push(ComparisonRow {
                a: *a,
                b: *b,
                score: compare(|r| r.mean_score),
                intensity: compare(|r| r.intensity),
            });
        }
    }
    rows
}
