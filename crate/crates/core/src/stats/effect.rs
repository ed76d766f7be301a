// SPDX-License-Identifier: MIT OR Apache-2.0

use super::special::student_t_two_sided;
use super::StatSummary;
use crate::error::{LabError, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (n - 1) variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Cohen's d with the Bessel-corrected pooled standard deviation. Zero when
/// both samples are constant and equal.
pub fn cohens_d(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b))
        / (na + nb - 2.0))
        .sqrt();
    let diff = mean(a) - mean(b);
    if diff == 0.0 {
        return 0.0;
    }
    diff / pooled
}

/// Cohen's h: `2 asin(sqrt(p1)) - 2 asin(sqrt(p2))`.
pub fn cohens_h(p1: f64, p2: f64) -> f64 {
    2.0 * p1.sqrt().asin() - 2.0 * p2.sqrt().asin()
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of
/// freedom, a two-sided p-value and Cohen's d as the effect size.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<StatSummary> {
    if a.len() < 2 || b.len() < 2 {
        return Err(LabError::Degenerate("Welch's t needs at least two values per sample".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(LabError::Degenerate("non-finite sample value".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a), sample_variance(b));
    if va == 0.0 && vb == 0.0 {
        return Err(LabError::Degenerate("both samples have zero variance".into()));
    }
    let (sa, sb) = (va / na, vb / nb);
    let se = (sa + sb).sqrt();
    let t = (mean(a) - mean(b)) / se;
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let p = student_t_two_sided(t, df);
    Ok(StatSummary {
        statistic: t,
        df: Some(df),
        effect_size: Some(cohens_d(a, b)),
        p_value: Some(p),
        ci_low: None,
        ci_high: None,
        n: vec![a.len(), b.len()],
    })
}
