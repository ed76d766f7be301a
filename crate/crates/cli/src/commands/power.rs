// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simulated power of the cross-topic permutation test.

use affectscope::geometry::power_simulation;

use crate::context::{metric, write_csv, Context, Metric};
use crate::error::CliError;

pub fn run(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.cfg.config.power;
    let points = power_simulation(&cfg.design(), &cfg.gaps, cfg.n_sims, cfg.seed)?;
    let dir = ctx.section("power")?;
    let metrics: Vec<Metric> = points
        .iter()
        .map(|p| metric(format!("power.gap_{}", p.gap), p.power))
        .collect();
    write_csv(&dir.join("power.csv"), &points)?;
    write_csv(&dir.join("metrics.csv"), &metrics)?;
    let summary: Vec<String> = points.iter().map(|p| format!("{}:{}", p.gap, p.power)).collect();
    Ok(format!("power by planted gap {}", summary.join(" ")))
}
