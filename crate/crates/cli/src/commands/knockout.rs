// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer-wise sublayer knockout on Set A and Set B.

use affectscope::knockout::{all_layers_zeroed_accuracy, critical_summary, knockout_sweep, sublayer_name, KnockoutSweep};
use serde::Serialize;

use crate::context::{join, metric, write_csv, write_json, Context, Metric};
use crate::error::CliError;

#[derive(Serialize)]
struct ResultRow<'a> {
    corpus: &'a str,
    sublayer: &'a str,
    ablation: &'a str,
    layer: usize,
    baseline_acc: f64,
    ablated_acc: f64,
    drop: f64,
    critical: bool,
}

#[derive(Serialize)]
struct CriticalCsvRow<'a> {
    corpus: &'a str,
    sublayer: &'a str,
    ablation: &'a str,
    baseline_acc: f64,
    all_zeroed_acc: f64,
    critical_count: usize,
    critical_layers: String,
}

#[derive(Serialize)]
struct DropRow<'a> {
    corpus: &'a str,
    sublayer: &'a str,
    ablation: &'a str,
    layer: usize,
    drop: f64,
}

pub fn run(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.cfg.config.knockout;
    let template = ctx.template()?;
    let corpora = ctx.corpora()?;
    let model = ctx.model(&template)?;

    let mut sweeps: Vec<(&str, KnockoutSweep)> = Vec::new();
    let mut zeroed = Vec::new();
    for (name, corpus) in [("set_a", &corpora.a), ("set_b", &corpora.b)] {
        zeroed.push((name, all_layers_zeroed_accuracy(&model, corpus, &template)?));
        for &sublayer in &cfg.sublayers {
            for &ablation in &cfg.ablations {
                sweeps.push((
                    name,
                    knockout_sweep(&model, corpus, &template, sublayer, ablation, cfg.seed, cfg.threshold)?,
                ));
            }
        }
    }
    let refs: Vec<(&str, &KnockoutSweep)> = sweeps.iter().map(|(n, s)| (*n, s)).collect();
    let critical = critical_summary(&refs);

    let dir = ctx.section("knockout")?;
    let mut results = Vec::new();
    let mut drops = Vec::new();
    for (corpus, sweep) in &sweeps {
        for r in &sweep.results {
            results.push(ResultRow {
                corpus,
                sublayer: sublayer_name(r.sublayer),
                ablation: r.ablation.as_str(),
                layer: r.layer,
                baseline_acc: r.baseline_acc,
                ablated_acc: r.ablated_acc,
                drop: r.drop,
                critical: r.critical,
            });
            drops.push(DropRow {
                corpus,
                sublayer: sublayer_name(r.sublayer),
                ablation: r.ablation.as_str(),
                layer: r.layer,
                drop: r.drop,
            });
        }
    }
    let zeroed_for = |corpus: &str| zeroed.iter().find(|(n, _)| *n == corpus).map_or(f64::NAN, |(_, a)| *a);
    let mut metrics: Vec<Metric> = Vec::new();
    let critical_rows: Vec<CriticalCsvRow<'_>> = critical
        .iter()
        .zip(&sweeps)
        .map(|(c, (_, sweep))| {
            let key = format!("knockout.{}.{}.{}", c.corpus, sublayer_name(c.sublayer), c.ablation.as_str());
            metrics.push(metric(format!("{key}.critical_count"), c.critical_count as f64));
            metrics.push(metric(format!("{key}.baseline_acc"), sweep.baseline_acc));
            CriticalCsvRow {
                corpus: &c.corpus,
                sublayer: sublayer_name(c.sublayer),
                ablation: c.ablation.as_str(),
                baseline_acc: sweep.baseline_acc,
                all_zeroed_acc: zeroed_for(&c.corpus),
                critical_count: c.critical_count,
                critical_layers: join(&c.critical_layers),
            }
        })
        .collect();
    for (name, acc) in &zeroed {
        metrics.push(metric(format!("knockout.{name}.all_zeroed_acc"), *acc));
    }
    write_csv(&dir.join("results.csv"), &results)?;
    write_csv(&dir.join("critical.csv"), &critical_rows)?;
    write_csv(&dir.join("drops.csv"), &drops)?;
    write_json(&dir.join("summary.json"), &critical)?;
    write_csv(&dir.join("metrics.csv"), &metrics)?;
    let total: usize = critical.iter().map(|c| c.critical_count).sum();
    Ok(format!("{} knockout sweeps; {total} critical layers in total", sweeps.len()))
}
