// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation patching between stimuli.
//!
//! A pair copies the source stimulus's stored activation at the extraction
//! position into the target prompt's forward pass at the same capture layer
//! and reads the resulting prediction. Each outcome records two success
//! flags: the prediction moved to the source emotion, or the prediction is
//! the target's own emotion. Summaries report both metrics per
//! (condition, layer) with a Wilson interval and Cohen's h against the
//! eight-way chance rate.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::probing::Source;
use crate::runtime::{classify, template_hash, Capture, Intervention, Model, StreamKind, Tokenizer};
use crate::stats::{cohens_h, wilson_interval};
use crate::stimulus::{render_prompt, Corpus, EmotionLabel, PromptTemplate, SetTag, Stimulus};

/// Chance rate of an eight-way classification.
pub const CHANCE_RATE: f64 = 0.125;

/// How source and target relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchCondition {
    /// Same stimulus set, different emotions.
    WithinSet,
    /// Different sets, same emotion.
    CrossSame,
    /// Different sets, different emotions.
    CrossDiff,
}

impl PatchCondition {
    pub const ALL: [PatchCondition; 3] =
        [PatchCondition::WithinSet, PatchCondition::CrossSame, PatchCondition::CrossDiff];

    pub fn as_str(self) -> &'static str {
        match self {
            PatchCondition::WithinSet => "within_set",
            PatchCondition::CrossSame => "cross_same",
            PatchCondition::CrossDiff => "cross_diff",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| LabError::parse("patch condition", format!("unknown condition {s:?}")))
    }

    /// Whether a (source, target) pair of emotional stimuli qualifies.
    pub fn admits(self, source: &Stimulus, target: &Stimulus) -> bool {
        let (Some(se), Some(te)) = (source.emotion, target.emotion) else {
            return false;
        };
        let same_set = source.set_tag == target.set_tag;
        match self {
            PatchCondition::WithinSet => same_set && se != te,
            PatchCondition::CrossSame => !same_set && se == te,
            PatchCondition::CrossDiff => !same_set && se != te,
        }
    }
}

/// Which success flag a summary counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessMetric {
    SourceShift,
    TargetCorrect,
}

impl SuccessMetric {
    pub const ALL: [SuccessMetric; 2] = [SuccessMetric::SourceShift, SuccessMetric::TargetCorrect];

    pub fn as_str(self) -> &'static str {
        match self {
            SuccessMetric::SourceShift => "source_shift",
            SuccessMetric::TargetCorrect => "target_correct",
        }
    }
}

/// One patch to perform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPair {
    pub source_id: String,
    pub target_id: String,
    pub source_emotion: EmotionLabel,
    pub target_emotion: EmotionLabel,
    pub source_set: SetTag,
    pub target_set: SetTag,
    pub condition: PatchCondition,
    pub layer: usize,
    pub stream: StreamKind,
}

/// Result of one patch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchOutcome {
    pub pair: PatchPair,
    pub baseline_label: EmotionLabel,
    pub patched_label: EmotionLabel,
    pub source_shift_success: bool,
    pub target_correct_success: bool,
}

impl PatchOutcome {
    pub fn success(&self, metric: SuccessMetric) -> bool {
        match metric {
            SuccessMetric::SourceShift => self.source_shift_success,
            SuccessMetric::TargetCorrect => self.target_correct_success,
        }
    }
}

/// Success statistics for one (condition, layer, metric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSummary {
    pub condition: PatchCondition,
    pub layer: usize,
    pub stream: StreamKind,
    pub metric: SuccessMetric,
    pub n: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub cohens_h_vs_chance: f64,
}

/// Sample `n` qualifying (source, target) pairs without replacement and
/// instantiate each at every layer in `layers`.
///
/// Candidates are the ordered pairs of distinct emotional stimuli across
/// all `corpora`, enumerated in corpus order, so the sample depends only on
/// the inputs and `seed`.
pub fn generate_pairs(
    corpora: &[&Corpus],
    condition: PatchCondition,
    n: usize,
    seed: u64,
    stream: StreamKind,
    layers: &[usize],
) -> Result<Vec<PatchPair>> {
    let stimuli: Vec<&Stimulus> = corpora.iter().flat_map(|c| c.stimuli()).collect();
    let mut candidates = Vec::new();
    for s in &stimuli {
        for t in &stimuli {
            if s.id != t.id && condition.admits(s, t) {
                candidates.push((*s, *t));
            }
        }
    }
    if n > candidates.len() {
        return Err(LabError::Infeasible(format!(
            "{} needs {n} pairs but only {} qualify",
            condition.as_str(),
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, candidates.len(), n).into_vec();
    chosen.sort_unstable();
    let mut pairs = Vec::with_capacity(n * layers.len());
    for &layer in layers {
        for &i in &chosen {
            let (s, t) = candidates[i];
            pairs.push(PatchPair {
                source_id: s.id.clone(),
                target_id: t.id.clone(),
                source_emotion: s.emotion.expect("admitted stimuli are emotional"),
                target_emotion: t.emotion.expect("admitted stimuli are emotional"),
                source_set: s.set_tag,
                target_set: t.set_tag,
                condition,
                layer,
                stream,
            });
        }
    }
    Ok(pairs)
}

/// Outcomes plus their summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchReport {
    pub outcomes: Vec<PatchOutcome>,
    pub summaries: Vec<PatchSummary>,
}

struct Target {
    tokens: Vec<u32>,
    extraction_index: usize,
    baseline: EmotionLabel,
}

/// Run every pair against `model`.
///
/// Source vectors come from the stores in `sources`; targets are rendered
/// from their corpora with `template`. The baseline prediction of each
/// target is computed once and shared by all pairs with that target.
pub fn run_patch_experiment(
    model: &Model,
    template: &PromptTemplate,
    sources: &[Source<'_>],
    pairs: &[PatchPair],
) -> Result<PatchReport> {
    let n_layers = model.config().n_layers;
    let t_hash = template_hash(template);
    for (store, corpus) in sources {
        let m = store.manifest();
        if m.model_fingerprint != model.fingerprint() {
            return Err(LabError::Store("activation store was built with a different model".into()));
        }
        if m.template_hash != t_hash {
            return Err(LabError::Store("activation store was built with a different template".into()));
        }
        store.check_complete(corpus)?;
    }
    let find = |id: &str| {
        sources
            .iter()
            .find_map(|(store, corpus)| corpus.get(id).map(|s| (*store, s)))
            .ok_or_else(|| LabError::Store(format!("stimulus {id} is in none of the corpora")))
    };
    for p in pairs {
        let block = p.stream.intervention_block(p.layer);
        if block.is_none_or(|b| b >= n_layers) {
            return Err(LabError::Intervention(format!(
                "cannot patch stream {} at layer {} of a {n_layers}-layer model",
                p.stream.as_str(),
                p.layer
            )));
        }
    }

    // Baselines, one per distinct target.
    let mut target_ids: Vec<&str> = pairs.iter().map(|p| p.target_id.as_str()).collect();
    target_ids.sort_unstable();
    target_ids.dedup();
    let tokenizer = Tokenizer::new();
    let targets: HashMap<&str, Target> = target_ids
        .par_iter()
        .map(|&id| {
            let (_, stimulus) = find(id)?;
            let prompt = render_prompt(template, stimulus, &tokenizer)?;
            let r = model.forward(&prompt.tokens, prompt.extraction_index, &[], Capture::none())?;
            Ok((
                id,
                Target {
                    tokens: prompt.tokens,
                    extraction_index: prompt.extraction_index,
                    baseline: classify(&r),
                },
            ))
        })
        .collect::<Result<_>>()?;

    // Source vectors, one matrix read per (stream, layer) and store.
    let mut matrices: HashMap<(usize, StreamKind, usize), Vec<Vec<f32>>> = HashMap::new();
    let mut payloads = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (store, _) = find(&p.source_id)?;
        let store_idx = sources
            .iter()
            .position(|(s, _)| std::ptr::eq(*s, store))
            .expect("store is one of the sources");
        let key = (store_idx, p.stream, p.layer);
        if let std::collections::hash_map::Entry::Vacant(e) = matrices.entry(key) {
            e.insert(store.matrix(p.stream, p.layer)?);
        }
        let row = store
            .index_of(&p.source_id)
            .ok_or_else(|| LabError::Store(format!("no activation for {}", p.source_id)))?;
        payloads.push(matrices[&key][row].clone());
    }

    let outcomes = pairs
        .par_iter()
        .zip(payloads)
        .map(|(p, payload)| {
            let t = &targets[p.target_id.as_str()];
            let block = p.stream.intervention_block(p.layer).expect("checked above");
            let patch = Intervention::patch(block, p.stream.sublayer(), t.extraction_index, payload);
            let r = model.forward(&t.tokens, t.extraction_index, &[patch], Capture::none())?;
            let patched = classify(&r);
            Ok(PatchOutcome {
                pair: p.clone(),
                baseline_label: t.baseline,
                patched_label: patched,
                source_shift_success: patched == p.source_emotion,
                target_correct_success: patched == p.target_emotion,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summaries = summarize(&outcomes);
    Ok(PatchReport { outcomes, summaries })
}

/// Statistics for `successes` out of `n` against the chance rate.
pub fn summary_stats(successes: usize, n: usize) -> (f64, f64, f64, f64) {
    let rate = if n == 0 { 0.0 } else { successes as f64 / n as f64 };
    let (lo, hi) = if n == 0 { (0.0, 1.0) } else { wilson_interval(successes, n, 0.95) };
    (rate, lo, hi, cohens_h(rate, CHANCE_RATE))
}

/// Group outcomes by (condition, stream, layer) and report both metrics.
pub fn summarize(outcomes: &[PatchOutcome]) -> Vec<PatchSummary> {
    let mut groups: BTreeMap<(PatchCondition, StreamKind, usize), Vec<&PatchOutcome>> = BTreeMap::new();
    for o in outcomes {
        groups
            .entry((o.pair.condition, o.pair.stream, o.pair.layer))
            .or_default()
            .push(o);
    }
    let mut out = Vec::new();
    for ((condition, stream, layer), group) in groups {
        for metric in SuccessMetric::ALL {
            let successes = group.iter().filter(|o| o.success(metric)).count();
            let (success_rate, wilson_low, wilson_high, h) = summary_stats(successes, group.len());
            out.push(PatchSummary {
                condition,
                layer,
                stream,
                metric,
                n: group.len(),
                successes,
                success_rate,
                wilson_low,
                wilson_high,
                cohens_h_vs_chance: h,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::FactorialDesign;

    fn stim(id: &str, e: EmotionLabel, tag: SetTag) -> Stimulus {
        Stimulus {
            id: id.into(),
            text: format!("words {id}"),
            emotion: Some(e),
            topic_domain: "home".into(),
            set_tag: tag,
        }
    }

    fn corpus(tag: SetTag, prefix: &str) -> Corpus {
        let stimuli = EmotionLabel::ALL
            .iter()
            .flat_map(|&e| (0..2).map(move |i| stim(&format!("{prefix}{}_{i}", e.code()), e, tag)))
            .collect();
        Corpus::new(stimuli, None::<FactorialDesign>).unwrap()
    }

    #[test]
    fn pairs_respect_conditions() {
        let a = corpus(SetTag::A, "a");
        let b = corpus(SetTag::B, "b");
        for condition in PatchCondition::ALL {
            let pairs = generate_pairs(&[&a, &b], condition, 8, 3, StreamKind::Residual, &[1, 2]).unwrap();
            assert_eq!(pairs.len(), 16);
            for p in &pairs {
                let same_set = p.source_set == p.target_set;
                let same_emotion = p.source_emotion == p.target_emotion;
                match condition {
                    PatchCondition::WithinSet => assert!(same_set && !same_emotion),
                    PatchCondition::CrossSame => assert!(!same_set && same_emotion),
                    PatchCondition::CrossDiff => assert!(!same_set && !same_emotion),
                }
            }
            assert_eq!(pairs[..8].iter().map(|p| &p.source_id).collect::<Vec<_>>(),
                pairs[8..].iter().map(|p| &p.source_id).collect::<Vec<_>>());
        }
    }

    #[test]
    fn pair_generation_is_seeded() {
        let a = corpus(SetTag::A, "a");
        let b = corpus(SetTag::B, "b");
        let g = |seed| generate_pairs(&[&a, &b], PatchCondition::CrossDiff, 10, seed, StreamKind::Residual, &[0]).unwrap();
        assert_eq!(g(7), g(7));
        assert_ne!(g(7), g(8));
    }

    #[test]
    fn infeasible_requests_error() {
        let a = corpus(SetTag::A, "a");
        assert!(matches!(
            generate_pairs(&[&a], PatchCondition::CrossSame, 1, 0, StreamKind::Residual, &[0]),
            Err(LabError::Infeasible(_))
        ));
        // 16 stimuli, each with 14 different-emotion partners.
        assert!(generate_pairs(&[&a], PatchCondition::WithinSet, 16 * 14, 0, StreamKind::Residual, &[0]).is_ok());
        assert!(generate_pairs(&[&a], PatchCondition::WithinSet, 16 * 14 + 1, 0, StreamKind::Residual, &[0]).is_err());
    }

    #[test]
    fn summary_of_perfect_run() {
        let (rate, lo, hi, h) = summary_stats(17, 17);
        assert_eq!(rate, 1.0);
        assert_eq!(((lo * 100.0).round() / 100.0, hi), (0.82, 1.0));
        assert!(h > 0.0);
        let (_, _, _, h) = summary_stats(6, 8);
        assert!((h - 1.37).abs() < 0.005);
    }
}
