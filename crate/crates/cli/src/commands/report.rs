// SPDX-License-Identifier: MIT OR Apache-2.0

//! Aggregate the per-section metrics of a run, optionally diffed against a
//! second run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::context::{write_csv, Metric};
use crate::error::CliError;

/// Analysis sections in pipeline order.
pub const SECTIONS: [&str; 6] = ["audit", "probe", "patch", "knockout", "geometry", "power"];

#[derive(Serialize)]
struct SectionRow<'a> {
    section: &'a str,
    present: bool,
    n_metrics: usize,
}

#[derive(Serialize)]
struct DiffRow<'a> {
    metric: &'a str,
    run_a: Option<f64>,
    run_b: Option<f64>,
    delta: Option<f64>,
}

fn read_metrics(path: &Path) -> Result<Vec<Metric>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|m| m.map_err(CliError::from)).collect()
}

/// All metrics of a run, in section order, and the per-section tally.
fn collect(run: &Path) -> Result<(Vec<Metric>, Vec<(&'static str, bool, usize)>), CliError> {
    if !run.is_dir() {
        return Err(CliError::Runtime(format!("run directory {} does not exist", run.display())));
    }
    let mut all = Vec::new();
    let mut tally = Vec::new();
    for section in SECTIONS {
        let path = run.join(section).join("metrics.csv");
        if path.is_file() {
            let m = read_metrics(&path)?;
            tally.push((section, true, m.len()));
            all.extend(m);
        } else {
            tally.push((section, false, 0));
        }
    }
    if tally.iter().all(|t| !t.1) {
        return Err(CliError::Runtime(format!("no section metrics found under {}", run.display())));
    }
    Ok((all, tally))
}

pub fn run(run_dir: &Path, other: Option<&Path>, out: Option<&Path>) -> Result<String, CliError> {
    let (metrics, tally) = collect(run_dir)?;
    let dir = out.map_or_else(|| run_dir.join("report"), Path::to_path_buf);
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let sections: Vec<SectionRow<'_>> = tally
        .iter()
        .map(|&(section, present, n_metrics)| SectionRow {
            section,
            present,
            n_metrics,
        })
        .collect();
    write_csv(&dir.join("summary.csv"), &sections)?;
    write_csv(&dir.join("metrics.csv"), &metrics)?;
    let present = tally.iter().filter(|t| t.1).count();
    let mut message = format!("{} metrics from {present} sections written to {}", metrics.len(), dir.display());

    if let Some(other) = other {
        let (b, _) = collect(other)?;
        let a_map: BTreeMap<&str, f64> = metrics.iter().map(|m| (m.metric.as_str(), m.value)).collect();
        let b_map: BTreeMap<&str, f64> = b.iter().map(|m| (m.metric.as_str(), m.value)).collect();
        let mut names: Vec<&str> = a_map.keys().chain(b_map.keys()).copied().collect();
        names.sort_unstable();
        names.dedup();
        let rows: Vec<DiffRow<'_>> = names
            .into_iter()
            .map(|name| {
                let (run_a, run_b) = (a_map.get(name).copied(), b_map.get(name).copied());
                DiffRow {
                    metric: name,
                    run_a,
                    run_b,
                    delta: run_a.zip(run_b).map(|(x, y)| y - x),
                }
            })
            .collect();
        let changed = rows.iter().filter(|r| r.delta != Some(0.0)).count();
        write_csv(&dir.join("diff.csv"), &rows)?;
        message.push_str(&format!("; {changed} of {} metrics differ", rows.len()));
    }
    Ok(message)
}
