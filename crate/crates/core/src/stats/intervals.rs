// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::special::normal_quantile;
use crate::error::{LabError, Result};

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize, confidence: f64) -> (f64, f64) {
    assert!(n >= 1 && successes <= n, "wilson_interval needs 0 <= successes <= n, n >= 1");
    let z = normal_quantile(1.0 - (1.0 - confidence) / 2.0);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let low = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if successes == n { 1.0 } else { (center + half).min(1.0) };
    (low, high)
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Percentile bootstrap interval.
///
/// Each resample draws item indices with replacement (within each stratum
/// of `strata` when `stratify` is set, preserving stratum sizes) and passes
/// them to `statistic`.
pub fn bootstrap_ci<F>(
    strata: &[usize],
    statistic: F,
    n_resamples: usize,
    seed: u64,
    stratify: bool,
    confidence: f64,
) -> Result<(f64, f64)>
where
    F: Fn(&[usize]) -> f64,
{
    let n = strata.len();
    if n < 2 {
        return Err(LabError::Degenerate("bootstrap needs at least two items".into()));
    }
    if n_resamples == 0 {
        return Err(LabError::Degenerate("bootstrap needs at least one resample".into()));
    }
    let groups: Vec<Vec<usize>> = if stratify {
        let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &s) in strata.iter().enumerate() {
            by.entry(s).or_default().push(i);
        }
        if let Some((s, g)) = by.iter().find(|(_, g)| g.len() < 2) {
            return Err(LabError::Degenerate(format!(
                "stratum {s} has {} item(s); stratified bootstrap needs two",
                g.len()
            )));
        }
        by.into_values().collect()
    } else {
        vec![(0..n).collect()]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(n_resamples);
    let mut sample = Vec::with_capacity(n);
    for _ in 0..n_resamples {
        sample.clear();
        for g in &groups {
            for _ in 0..g.len() {
                sample.push(g[rng.random_range(0..g.len())]);
            }
        }
        stats.push(statistic(&sample));
    }
    stats.sort_by(f64::total_cmp);
    let alpha = 1.0 - confidence;
    Ok((percentile(&stats, alpha / 2.0), percentile(&stats, 1.0 - alpha / 2.0)))
}
