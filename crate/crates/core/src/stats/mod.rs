// SPDX-License-Identifier: MIT OR Apache-2.0

//! Statistical primitives shared by the analyses. Everything here is pure
//! and deterministic given its seed arguments.

mod auroc;
mod effect;
mod fdr;
mod intervals;
mod ks;
pub mod special;

use serde::{Deserialize, Serialize};

pub use auroc::{auroc, macro_ovr_auroc};
pub use effect::{cohens_d, cohens_h, mean, sample_variance, welch_t};
pub use fdr::bh_adjust;
pub use intervals::{bootstrap_ci, percentile, wilson_interval};
pub use ks::{ks_uniform, KsResult};

/// A test statistic with its effect size, p-value and interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub statistic: f64,
    pub df: Option<f64>,
    pub effect_size: Option<f64>,
    pub p_value: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: Vec<usize>,
}
