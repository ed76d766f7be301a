// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation patching across the three pair conditions.

use affectscope::patching::{generate_pairs, run_patch_experiment, PatchPair};
use affectscope::probing::Source;
use serde::Serialize;

use crate::context::{metric, write_csv, write_json, Context, Metric};
use crate::error::CliError;

#[derive(Serialize)]
struct OutcomeRow<'a> {
    condition: &'a str,
    stream: &'a str,
    layer: usize,
    source_id: &'a str,
    target_id: &'a str,
    source_emotion: &'a str,
    target_emotion: &'a str,
    source_set: &'a str,
    target_set: &'a str,
    baseline_label: &'a str,
    patched_label: &'a str,
    source_shift_success: bool,
    target_correct_success: bool,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    condition: &'a str,
    stream: &'a str,
    layer: usize,
    metric: &'a str,
    n: usize,
    successes: usize,
    success_rate: f64,
    wilson_low: f64,
    wilson_high: f64,
    cohens_h_vs_chance: f64,
}

pub fn run(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.cfg.config.patch;
    let template = ctx.template()?;
    let corpora = ctx.corpora()?;
    let model = ctx.model(&template)?;
    let n_layers = model.config().n_layers;
    let store_a = ctx.store("set_a", &corpora.a, &model)?;
    let store_b = ctx.store("set_b", &corpora.b, &model)?;
    let sources: [Source<'_>; 2] = [(&store_a, &corpora.a), (&store_b, &corpora.b)];
    let layers: Vec<usize> = match &cfg.layers {
        Some(l) => l.clone(),
        None => cfg
            .stream
            .layers(n_layers)
            .filter(|&l| cfg.stream.intervention_block(l).is_some_and(|b| b < n_layers))
            .collect(),
    };

    let mut pairs: Vec<PatchPair> = Vec::new();
    for &condition in &cfg.conditions {
        pairs.extend(generate_pairs(
            &[&corpora.a, &corpora.b],
            condition,
            cfg.n_pairs,
            cfg.seed,
            cfg.stream,
            &layers,
        )?);
    }
    let report = run_patch_experiment(&model, &template, &sources, &pairs)?;

    let dir = ctx.section("patch")?;
    let outcomes: Vec<OutcomeRow<'_>> = report
        .outcomes
        .iter()
        .map(|o| OutcomeRow {
            condition: o.pair.condition.as_str(),
            stream: o.pair.stream.as_str(),
            layer: o.pair.layer,
            source_id: &o.pair.source_id,
            target_id: &o.pair.target_id,
            source_emotion: o.pair.source_emotion.name(),
            target_emotion: o.pair.target_emotion.name(),
            source_set: o.pair.source_set.as_str(),
            target_set: o.pair.target_set.as_str(),
            baseline_label: o.baseline_label.name(),
            patched_label: o.patched_label.name(),
            source_shift_success: o.source_shift_success,
            target_correct_success: o.target_correct_success,
        })
        .collect();
    let summaries: Vec<SummaryRow<'_>> = report
        .summaries
        .iter()
        .map(|s| SummaryRow {
            condition: s.condition.as_str(),
            stream: s.stream.as_str(),
            layer: s.layer,
            metric: s.metric.as_str(),
            n: s.n,
            successes: s.successes,
            success_rate: s.success_rate,
            wilson_low: s.wilson_low,
            wilson_high: s.wilson_high,
            cohens_h_vs_chance: s.cohens_h_vs_chance,
        })
        .collect();
    let metrics: Vec<Metric> = summaries
        .iter()
        .map(|s| {
            metric(
                format!("patch.{}.{}.{}.{}.success_rate", s.condition, s.stream, s.layer, s.metric),
                s.success_rate,
            )
        })
        .collect();
    write_csv(&dir.join("outcomes.csv"), &outcomes)?;
    write_csv(&dir.join("summary.csv"), &summaries)?;
    write_json(&dir.join("summary.json"), &report.summaries)?;
    write_csv(&dir.join("metrics.csv"), &metrics)?;
    Ok(format!(
        "{} patch runs over {} layers and {} conditions",
        report.outcomes.len(),
        layers.len(),
        cfg.conditions.len()
    ))
}
