// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer-wise probes, set comparison, dissociation, transfer and frozen
//! scoring.

use std::collections::BTreeMap;

use affectscope::probing::{
    dissociation_report, fit_from_sources, frozen_score, layer_sweep, transfer, LayerSweep, ProbeSpec, ProbeTask,
    Source,
};
use affectscope::runtime::StreamKind;
use affectscope::stats::welch_t;
use serde::Serialize;

use crate::context::{metric, write_csv, write_json, Context, Metric};
use crate::error::CliError;

#[derive(Serialize)]
struct FoldRow<'a> {
    task: &'a str,
    corpus: &'a str,
    stream: &'a str,
    layer: usize,
    fold: usize,
    auroc: f64,
}

#[derive(Serialize)]
struct SweepRow<'a> {
    task: &'a str,
    corpus: &'a str,
    stream: &'a str,
    layer: usize,
    auroc_mean: f64,
    ci_low: f64,
    ci_high: f64,
    n: usize,
}

#[derive(Serialize)]
struct PeakRow<'a> {
    task: &'a str,
    corpus: &'a str,
    stream: &'a str,
    peak_layer: usize,
    normalized_depth: f64,
    peak_auroc: f64,
    ci_low: f64,
    ci_high: f64,
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    stream: &'a str,
    layer_a: usize,
    auroc_a: f64,
    layer_b: usize,
    auroc_b: f64,
    drop_pp: f64,
    ci_low_b: f64,
    ci_high_b: f64,
    welch_t: Option<f64>,
    df: Option<f64>,
    p_value: Option<f64>,
    cohens_d: Option<f64>,
}

#[derive(Serialize)]
struct TransferRow<'a> {
    stream: &'a str,
    layer: usize,
    a_to_b: f64,
    b_to_a: f64,
}

#[derive(Serialize)]
struct FrozenRow<'a> {
    id: &'a str,
    topic_domain: &'a str,
    p_emotional: f64,
}

#[derive(Serialize)]
struct FrozenSummaryRow {
    layer: usize,
    n: usize,
    mean: f64,
    median: f64,
    above_0_5: usize,
    above_0_8: usize,
    reference_emotional_mean: f64,
    reference_neutral_mean: f64,
}

#[derive(Serialize)]
struct DomainRow<'a> {
    topic_domain: &'a str,
    n: usize,
    mean: f64,
}

#[derive(Serialize)]
struct LayerProfileRow {
    layer: usize,
    mean: f64,
    median: f64,
    above_0_5: usize,
}

pub fn run(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.cfg.config.probe;
    let template = ctx.template()?;
    let corpora = ctx.corpora()?;
    let model = ctx.model(&template)?;
    let store_a = ctx.store("set_a", &corpora.a, &model)?;
    let store_b = ctx.store("set_b", &corpora.b, &model)?;
    let store_bn = ctx.store("set_b_neutral", &corpora.b_neutral, &model)?;
    let store_c = ctx.store("set_c", &corpora.c, &model)?;
    let src_a: [Source<'_>; 1] = [(&store_a, &corpora.a)];
    let src_b: [Source<'_>; 1] = [(&store_b, &corpora.b)];
    let src_binary: [Source<'_>; 2] = [(&store_b, &corpora.b), (&store_bn, &corpora.b_neutral)];
    let spec = |task, stream, layer| ProbeSpec {
        folds: cfg.folds,
        l2_strength: cfg.l2_strength,
        max_iters: cfg.max_iters,
        tol: cfg.tol,
        seed: cfg.seed,
        bootstrap_resamples: cfg.bootstrap_resamples,
        ..ProbeSpec::new(task, stream, layer)
    };

    let dir = ctx.section("probe")?;
    let mut folds = Vec::new();
    let mut sweep_rows = Vec::new();
    let mut peaks = Vec::new();
    let mut metrics: Vec<Metric> = Vec::new();
    let mut sweeps: BTreeMap<(&str, &str, StreamKind), LayerSweep> = BTreeMap::new();
    let jobs: [(ProbeTask, &str, &[Source<'_>]); 3] = [
        (ProbeTask::EightClass, "set_a", &src_a),
        (ProbeTask::EightClass, "set_b", &src_b),
        (ProbeTask::BinaryEmotionalVsNeutral, "set_b+set_b_neutral", &src_binary),
    ];
    for (task, corpus, sources) in jobs {
        for &stream in &cfg.streams {
            let sweep = layer_sweep(sources, &spec(task, stream, 0))?;
            for r in &sweep.results {
                for (fold, &auroc) in r.fold_aurocs.iter().enumerate() {
                    folds.push(FoldRow {
                        task: task.as_str(),
                        corpus,
                        stream: stream.as_str(),
                        layer: r.spec.layer,
                        fold,
                        auroc,
                    });
                }
                sweep_rows.push(SweepRow {
                    task: task.as_str(),
                    corpus,
                    stream: stream.as_str(),
                    layer: r.spec.layer,
                    auroc_mean: r.auroc_mean,
                    ci_low: r.ci_low,
                    ci_high: r.ci_high,
                    n: r.n,
                });
            }
            let peak = sweep.peak();
            peaks.push(PeakRow {
                task: task.as_str(),
                corpus,
                stream: stream.as_str(),
                peak_layer: sweep.peak_layer,
                normalized_depth: sweep.normalized_depth,
                peak_auroc: peak.auroc_mean,
                ci_low: peak.ci_low,
                ci_high: peak.ci_high,
            });
            let key = format!("probe.{}.{corpus}.{}", task.as_str(), stream.as_str());
            metrics.push(metric(format!("{key}.peak_auroc"), peak.auroc_mean));
            metrics.push(metric(format!("{key}.peak_layer"), sweep.peak_layer as f64));
            metrics.push(metric(format!("{key}.normalized_depth"), sweep.normalized_depth));
            sweeps.insert((task.as_str(), corpus, stream), sweep);
        }
    }
    write_csv(&dir.join("folds.csv"), &folds)?;
    write_csv(&dir.join("sweep.csv"), &sweep_rows)?;
    write_csv(&dir.join("peaks.csv"), &peaks)?;

    // Set A versus Set B eight-class probes at each set's peak.
    let mut comparison = Vec::new();
    let mut dissociation = Vec::new();
    for &stream in &cfg.streams {
        let a = &sweeps[&("eight_class", "set_a", stream)];
        let b = &sweeps[&("eight_class", "set_b", stream)];
        let (pa, pb) = (a.peak(), b.peak());
        let welch = welch_t(&pa.fold_aurocs, &pb.fold_aurocs).ok();
        let drop_pp = (pb.auroc_mean - pa.auroc_mean) * 100.0;
        comparison.push(ComparisonRow {
            stream: stream.as_str(),
            layer_a: a.peak_layer,
            auroc_a: pa.auroc_mean,
            layer_b: b.peak_layer,
            auroc_b: pb.auroc_mean,
            drop_pp,
            ci_low_b: pb.ci_low,
            ci_high_b: pb.ci_high,
            welch_t: welch.as_ref().map(|w| w.statistic),
            df: welch.as_ref().and_then(|w| w.df),
            p_value: welch.as_ref().and_then(|w| w.p_value),
            cohens_d: welch.as_ref().and_then(|w| w.effect_size),
        });
        metrics.push(metric(format!("probe.set_drop.{}.drop_pp", stream.as_str()), drop_pp));

        let binary = &sweeps[&("binary_emotional_vs_neutral", "set_b+set_b_neutral", stream)];
        let row = dissociation_report(binary, b)?;
        metrics.push(metric(format!("probe.dissociation.{}.gap_pp", stream.as_str()), row.gap_pp));
        dissociation.push(row);
    }
    write_csv(&dir.join("set_comparison.csv"), &comparison)?;
    write_csv(&dir.join("dissociation.csv"), &dissociation)?;

    let mut transfers = Vec::new();
    for &stream in &cfg.streams {
        for layer in stream.layers(model.config().n_layers) {
            let s = spec(ProbeTask::EightClass, stream, layer);
            let row = TransferRow {
                stream: stream.as_str(),
                layer,
                a_to_b: transfer(&src_a, &src_b, &s)?,
                b_to_a: transfer(&src_b, &src_a, &s)?,
            };
            metrics.push(metric(format!("probe.transfer.{}.{layer}.a_to_b", stream.as_str()), row.a_to_b));
            metrics.push(metric(format!("probe.transfer.{}.{layer}.b_to_a", stream.as_str()), row.b_to_a));
            transfers.push(row);
        }
    }
    write_csv(&dir.join("transfer.csv"), &transfers)?;

    // Frozen binary probe on the residual stream, applied to Set C.
    let binary_h = match sweeps.get(&("binary_emotional_vs_neutral", "set_b+set_b_neutral", StreamKind::Residual)) {
        Some(s) => s.peak_layer,
        None => layer_sweep(&src_binary, &spec(ProbeTask::BinaryEmotionalVsNeutral, StreamKind::Residual, 0))?.peak_layer,
    };
    let frozen_layer = cfg.frozen_layer.unwrap_or(binary_h);
    if frozen_layer > model.config().n_layers {
        return Err(CliError::Config(format!("probe.frozen_layer {frozen_layer} exceeds the model depth")));
    }
    let probe = fit_from_sources(&src_binary, &spec(ProbeTask::BinaryEmotionalVsNeutral, StreamKind::Residual, frozen_layer))?;
    probe.save(dir.join("frozen_probe.tensors"))?;
    let scored = frozen_score(&probe, &store_c, &corpora.c)?;
    let reference_emotional = frozen_score(&probe, &store_b, &corpora.b)?.mean;
    let reference_neutral = frozen_score(&probe, &store_bn, &corpora.b_neutral)?.mean;
    let rows: Vec<FrozenRow<'_>> = corpora
        .c
        .stimuli()
        .iter()
        .zip(&scored.probabilities)
        .map(|(s, &p)| FrozenRow {
            id: &s.id,
            topic_domain: &s.topic_domain,
            p_emotional: p,
        })
        .collect();
    let mut by_domain: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        by_domain.entry(r.topic_domain).or_default().push(r.p_emotional);
    }
    let domains: Vec<DomainRow<'_>> = by_domain
        .iter()
        .map(|(d, ps)| DomainRow {
            topic_domain: d,
            n: ps.len(),
            mean: ps.iter().sum::<f64>() / ps.len() as f64,
        })
        .collect();
    write_csv(&dir.join("frozen_scores.csv"), &rows)?;
    write_csv(&dir.join("frozen_domains.csv"), &domains)?;
    write_csv(
        &dir.join("frozen_summary.csv"),
        &[FrozenSummaryRow {
            layer: frozen_layer,
            n: scored.n,
            mean: scored.mean,
            median: scored.median,
            above_0_5: scored.above_0_5,
            above_0_8: scored.above_0_8,
            reference_emotional_mean: reference_emotional,
            reference_neutral_mean: reference_neutral,
        }],
    )?;
    metrics.push(metric("probe.frozen.set_c.mean", scored.mean));
    metrics.push(metric("probe.frozen.set_c.above_0_5", scored.above_0_5 as f64));
    metrics.push(metric("probe.frozen.set_b.mean", reference_emotional));
    metrics.push(metric("probe.frozen.set_b_neutral.mean", reference_neutral));

    let mut profile = Vec::new();
    for layer in StreamKind::Residual.layers(model.config().n_layers) {
        let p = fit_from_sources(&src_binary, &spec(ProbeTask::BinaryEmotionalVsNeutral, StreamKind::Residual, layer))?;
        let s = frozen_score(&p, &store_c, &corpora.c)?;
        profile.push(LayerProfileRow {
            layer,
            mean: s.mean,
            median: s.median,
            above_0_5: s.above_0_5,
        });
    }
    write_csv(&dir.join("frozen_layers.csv"), &profile)?;

    let summaries: Vec<_> = sweeps
        .values()
        .map(|s| {
            serde_json::json!({
                "task": s.task,
                "stream": s.stream,
                "n_layers": s.n_layers,
                "peak_layer": s.peak_layer,
                "normalized_depth": s.normalized_depth,
                "peak_auroc": s.peak().auroc_mean,
                "ci_low": s.peak().ci_low,
                "ci_high": s.peak().ci_high,
            })
        })
        .collect();
    write_json(&dir.join("sweeps.json"), &summaries)?;
    write_csv(&dir.join("metrics.csv"), &metrics)?;
    Ok(format!("{} sweeps; frozen probe at layer {frozen_layer}: set_c mean P(emotional) {}", sweeps.len(), scored.mean))
}
