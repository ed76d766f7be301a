// SPDX-License-Identifier: MIT OR Apache-2.0

//! Representational geometry: cosine gaps, silhouettes, cross-topic
//! permutation tests, keyword attention and PCA.

use affectscope::geometry::{
    attention_keyword_sensitivity, corpus_attention, cosine_gap, keyword_attention_mass, pca_project,
    permutation_family, silhouette, target_keyword_masks, GeometryInput, Labeling, Pairing,
};
use affectscope::probing::Source;
use affectscope::EmotionLabel;
use serde::Serialize;

use crate::context::{metric, write_csv, write_records, Context, Metric};
use crate::error::CliError;

#[derive(Serialize)]
struct GapRow {
    layer: usize,
    pairing: &'static str,
    within_emotion_mean: f64,
    cross_emotion_mean: f64,
    gap: f64,
    cohens_d: Option<f64>,
    n_within: usize,
    n_cross: usize,
}

#[derive(Serialize)]
struct SilhouetteRow {
    layer: usize,
    emotion_silhouette: f64,
    set_silhouette: f64,
}

#[derive(Serialize)]
struct PermutationRow {
    layer: usize,
    emotion: &'static str,
    observed_gap: f64,
    p_raw: f64,
    q_bh: f64,
    n_permutations: usize,
}

#[derive(Serialize)]
struct AttentionRow {
    layer: usize,
    head: usize,
    keyword_mass_a: f64,
    keyword_mass_b: f64,
    sensitivity: f64,
}

#[derive(Serialize)]
struct VarianceRow {
    component: usize,
    explained_variance_ratio: f64,
}

fn pairing_name(p: Pairing) -> &'static str {
    match p {
        Pairing::CrossSetSameEmotion => "cross_set",
        Pairing::CrossTopicWithinEmotion => "cross_topic",
    }
}

fn emotion_name(code: usize) -> &'static str {
    EmotionLabel::from_code(code).map_or("unknown", EmotionLabel::name)
}

pub fn run(ctx: &Context) -> Result<String, CliError> {
    let cfg = &ctx.cfg.config.geometry;
    let template = ctx.template()?;
    let lexicon = ctx.lexicon()?;
    let corpora = ctx.corpora()?;
    let model = ctx.model(&template)?;
    let n_layers = model.config().n_layers;
    let store_a = ctx.store("set_a", &corpora.a, &model)?;
    let store_b = ctx.store("set_b", &corpora.b, &model)?;
    let both: [Source<'_>; 2] = [(&store_a, &corpora.a), (&store_b, &corpora.b)];
    let only_b: [Source<'_>; 1] = [(&store_b, &corpora.b)];
    let stream = cfg.stream;
    let focus = cfg.layer.unwrap_or(n_layers);
    if !stream.layers(n_layers).contains(&focus) {
        return Err(CliError::Config(format!(
            "geometry.layer {focus} is not a layer of stream {}",
            stream.as_str()
        )));
    }

    let dir = ctx.section("geometry")?;
    let mut metrics: Vec<Metric> = Vec::new();
    let mut gaps = Vec::new();
    let mut silhouettes = Vec::new();
    for layer in stream.layers(n_layers) {
        let ab = GeometryInput::from_sources(&both, stream, layer)?;
        let b = GeometryInput::from_sources(&only_b, stream, layer)?;
        for (pairing, input) in [(Pairing::CrossSetSameEmotion, &ab), (Pairing::CrossTopicWithinEmotion, &b)] {
            let r = cosine_gap(input, pairing)?;
            metrics.push(metric(
                format!("geometry.{}.{}.{layer}.gap", pairing_name(pairing), stream.as_str()),
                r.gap,
            ));
            gaps.push(GapRow {
                layer,
                pairing: pairing_name(pairing),
                within_emotion_mean: r.within_emotion_mean,
                cross_emotion_mean: r.cross_emotion_mean,
                gap: r.gap,
                cohens_d: r.cohens_d,
                n_within: r.n_within,
                n_cross: r.n_cross,
            });
        }
        let row = SilhouetteRow {
            layer,
            emotion_silhouette: silhouette(&ab, Labeling::Emotion)?,
            set_silhouette: silhouette(&ab, Labeling::Set)?,
        };
        metrics.push(metric(
            format!("geometry.silhouette.emotion.{}.{layer}", stream.as_str()),
            row.emotion_silhouette,
        ));
        metrics.push(metric(format!("geometry.silhouette.set.{}.{layer}", stream.as_str()), row.set_silhouette));
        silhouettes.push(row);
    }
    write_csv(&dir.join("cosine_gap.csv"), &gaps)?;
    write_csv(&dir.join("silhouette.csv"), &silhouettes)?;

    let b_focus = GeometryInput::from_sources(&only_b, stream, focus)?;
    let family = permutation_family(&b_focus, cfg.n_permutations, cfg.seed)?;
    let perm_rows: Vec<PermutationRow> = family
        .iter()
        .map(|r| PermutationRow {
            layer: focus,
            emotion: emotion_name(r.emotion),
            observed_gap: r.observed_gap,
            p_raw: r.p_raw,
            q_bh: r.q_bh,
            n_permutations: r.n_permutations,
        })
        .collect();
    let significant = family.iter().filter(|r| r.q_bh <= 0.05).count();
    metrics.push(metric("geometry.permutation.significant_at_0_05", significant as f64));
    for r in &perm_rows {
        metrics.push(metric(format!("geometry.permutation.{}.q_bh", r.emotion), r.q_bh));
    }
    write_csv(&dir.join("permutation.csv"), &perm_rows)?;

    let att_a = corpus_attention(&store_a, &corpora.a)?;
    let att_b = corpus_attention(&store_b, &corpora.b)?;
    let masks_a = target_keyword_masks(&corpora.a, &template, &lexicon)?;
    let masks_b = target_keyword_masks(&corpora.b, &template, &lexicon)?;
    let mass_a = keyword_attention_mass(&att_a, &masks_a)?;
    let mass_b = keyword_attention_mass(&att_b, &masks_b)?;
    let sensitivity = attention_keyword_sensitivity((&att_a, &masks_a), (&att_b, &masks_b))?;
    let mut att_rows = Vec::new();
    for (layer, heads) in sensitivity.iter().enumerate() {
        for (head, &s) in heads.iter().enumerate() {
            att_rows.push(AttentionRow {
                layer,
                head,
                keyword_mass_a: mass_a[layer][head],
                keyword_mass_b: mass_b[layer][head],
                sensitivity: s,
            });
        }
    }
    let max_sensitivity = att_rows.iter().map(|r| r.sensitivity).fold(f64::NEG_INFINITY, f64::max);
    metrics.push(metric("geometry.attention.max_sensitivity", max_sensitivity));
    write_csv(&dir.join("attention_sensitivity.csv"), &att_rows)?;

    let ab_focus = GeometryInput::from_sources(&both, stream, focus)?;
    let pca = pca_project(ab_focus.vectors(), cfg.pca_components)?;
    let stimuli = [&corpora.a, &corpora.b]
        .into_iter()
        .flat_map(|c| c.stimuli())
        .filter(|s| s.emotion.is_some());
    let mut header: Vec<String> = ["id", "set", "emotion", "topic_domain"].map(String::from).to_vec();
    header.extend((1..=cfg.pca_components).map(|k| format!("pc{k}")));
    let records: Vec<Vec<String>> = stimuli
        .zip(&pca.coordinates)
        .map(|(s, coords)| {
            let mut r = vec![
                s.id.clone(),
                s.set_tag.as_str().to_string(),
                s.emotion.map_or("", EmotionLabel::name).to_string(),
                s.topic_domain.clone(),
            ];
            r.extend(coords.iter().map(f64::to_string));
            r
        })
        .collect();
    write_records(&dir.join("pca.csv"), &header, &records)?;
    let variance: Vec<VarianceRow> = pca
        .explained_variance_ratio
        .iter()
        .enumerate()
        .map(|(i, &v)| VarianceRow {
            component: i + 1,
            explained_variance_ratio: v,
        })
        .collect();
    write_csv(&dir.join("pca_variance.csv"), &variance)?;
    write_csv(&dir.join("metrics.csv"), &metrics)?;
    Ok(format!(
        "geometry over {} layers of stream {}; {significant} of {} emotions significant after BH at layer {focus}",
        silhouettes.len(),
        stream.as_str(),
        family.len()
    ))
}
