// SPDX-License-Identifier: MIT OR Apache-2.0

//! Representational geometry of captured activations.
//!
//! Every similarity here is cosine similarity, so each statistic is
//! invariant to rescaling the vectors. Vectors with zero norm have cosine 0
//! with everything.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lexicon::{keyword_spans, Lexicon};
use crate::probing::Source;
use crate::runtime::{ActivationStore, StreamKind, Tokenizer};
use crate::stats::{cohens_d, mean};
use crate::stimulus::{render_prompt, Corpus, PromptTemplate};

pub use crate::stats::bh_adjust;

/// Default permutation count of the cross-topic test.
pub const DEFAULT_PERMUTATIONS: usize = 10_000;

/// Relative tolerance when comparing a null statistic to the observed one.
const TIE_TOL: f64 = 1e-10;

/// Activation rows with their emotion, set and topic labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryInput {
    vectors: Vec<Vec<f64>>,
    emotions: Vec<usize>,
    sets: Vec<String>,
    topics: Vec<String>,
    unit: Vec<Vec<f64>>,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        vec![0.0; v.len()]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl GeometryInput {
    pub fn new(vectors: Vec<Vec<f64>>, emotions: Vec<usize>, sets: Vec<String>, topics: Vec<String>) -> Result<Self> {
        let n = vectors.len();
        if emotions.len() != n || sets.len() != n || topics.len() != n {
            return Err(LabError::Validation("label lists must align with the vector rows".into()));
        }
        if n == 0 {
            return Err(LabError::Degenerate("no vectors".into()));
        }
        let d = vectors[0].len();
        if vectors.iter().any(|v| v.len() != d) {
            return Err(LabError::Validation("vectors differ in width".into()));
        }
        if vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(LabError::Validation("vectors contain non-finite values".into()));
        }
        let unit = vectors.iter().map(|v| unit(v)).collect();
        Ok(Self {
            vectors,
            emotions,
            sets,
            topics,
            unit,
        })
    }

    /// Rows of the emotional stimuli of every source at one (stream, layer).
    pub fn from_sources(sources: &[Source<'_>], stream: StreamKind, layer: usize) -> Result<Self> {
        let (mut vectors, mut emotions, mut sets, mut topics) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (store, corpus) in sources {
            store.check_complete(corpus)?;
            let labelled: Vec<_> = corpus.stimuli().iter().filter(|s| s.emotion.is_some()).collect();
            let ids: Vec<&str> = labelled.iter().map(|s| s.id.as_str()).collect();
            for (row, s) in store.rows_for(stream, layer, &ids)?.into_iter().zip(&labelled) {
                vectors.push(row.into_iter().map(f64::from).collect());
                emotions.push(s.emotion.expect("filtered").code());
                sets.push(s.set_tag.as_str().to_string());
                topics.push(s.topic_domain.clone());
            }
        }
        Self::new(vectors, emotions, sets, topics)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn emotions(&self) -> &[usize] {
        &self.emotions
    }

    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        dot(&self.unit[i], &self.unit[j])
    }

    fn cosine_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let c = self.cosine(i, j);
                m[i][j] = c;
                m[j][i] = c;
            }
        }
        m
    }

    /// Dense integer codes for topic labels, in first-seen order.
    fn topic_codes(&self) -> Vec<usize> {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        let mut order = 0;
        self.topics
            .iter()
            .map(|t| {
                *seen.entry(t.as_str()).or_insert_with(|| {
                    order += 1;
                    order - 1
                })
            })
            .collect()
    }
}

/// Which stimulus pairs a cosine gap compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Pairs from different stimulus sets.
    CrossSetSameEmotion,
    /// Pairs from different topic domains.
    CrossTopicWithinEmotion,
}

/// Mean within-emotion versus cross-emotion cosine similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineGapResult {
    pub within_emotion_mean: f64,
    pub cross_emotion_mean: f64,
    pub gap: f64,
    /// Pooled-SD effect size over pair similarities; `None` with fewer than
    /// three pairs in total.
    pub cohens_d: Option<f64>,
    pub n_within: usize,
    pub n_cross: usize,
}

/// Compare same-emotion pairs with different-emotion pairs, both restricted
/// to pairs that differ in set (or topic, per `pairing`).
pub fn cosine_gap(input: &GeometryInput, pairing: Pairing) -> Result<CosineGapResult> {
    let mut within = Vec::new();
    let mut cross = Vec::new();
    for i in 0..input.len() {
        for j in i + 1..input.len() {
            let differs = match pairing {
                Pairing::CrossSetSameEmotion => input.sets[i] != input.sets[j],
                Pairing::CrossTopicWithinEmotion => input.topics[i] != input.topics[j],
            };
            if !differs {
                continue;
            }
            if input.emotions[i] == input.emotions[j] {
                within.push(input.cosine(i, j));
            } else {
                cross.push(input.cosine(i, j));
            }
        }
    }
    if within.is_empty() || cross.is_empty() {
        return Err(LabError::Degenerate("cosine gap needs both within- and cross-emotion pairs".into()));
    }
    let (w, c) = (mean(&within), mean(&cross));
    Ok(CosineGapResult {
        within_emotion_mean: w,
        cross_emotion_mean: c,
        gap: w - c,
        cohens_d: (within.len() + cross.len() >= 3).then(|| cohens_d(&within, &cross)),
        n_within: within.len(),
        n_cross: cross.len(),
    })
}

/// Which labels define the silhouette clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    Emotion,
    Set,
}

/// Mean silhouette with cosine distance over the samples of clusters with
/// at least two members.
pub fn silhouette(input: &GeometryInput, labeling: Labeling) -> Result<f64> {
    let labels: Vec<String> = match labeling {
        Labeling::Emotion => input.emotions.iter().map(|e| e.to_string()).collect(),
        Labeling::Set => input.sets.clone(),
    };
    silhouette_samples(&input.cosine_matrix(), &labels).map(|s| mean(&s))
}

/// Per-sample silhouettes from a cosine-similarity matrix; samples in
/// singleton clusters are omitted.
pub fn silhouette_samples<L: Ord>(cosines: &[Vec<f64>], labels: &[L]) -> Result<Vec<f64>> {
    let mut clusters: BTreeMap<&L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        clusters.entry(l).or_default().push(i);
    }
    if clusters.len() < 2 {
        return Err(LabError::Degenerate("silhouette needs at least two clusters".into()));
    }
    if clusters.values().all(|c| c.len() < 2) {
        return Err(LabError::Degenerate("silhouette needs a cluster with two members".into()));
    }
    let dist = |i: usize, j: usize| 1.0 - cosines[i][j];
    let mut out = Vec::new();
    for (label, members) in &clusters {
        if members.len() < 2 {
            continue;
        }
        for &i in members {
            let a = members.iter().filter(|&&j| j != i).map(|&j| dist(i, j)).sum::<f64>()
                / (members.len() - 1) as f64;
            let b = clusters
                .iter()
                .filter(|(other, _)| *other != label)
                .map(|(_, m)| m.iter().map(|&j| dist(i, j)).sum::<f64>() / m.len() as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            out.push(if denom > 0.0 { (b - a) / denom } else { 0.0 });
        }
    }
    Ok(out)
}

/// Cross-topic permutation test outcome for one emotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub emotion: usize,
    pub observed_gap: f64,
    pub p_raw: f64,
    pub q_bh: f64,
    pub n_permutations: usize,
}

/// Mean cosine of `emotion` members with same-emotion partners from other
/// topics minus their mean cosine with other-emotion partners from other
/// topics.
fn topic_gap(cos: &[Vec<f64>], labels: &[usize], topics: &[usize], emotion: usize) -> f64 {
    let (mut ws, mut wn, mut cs, mut cn) = (0.0, 0usize, 0.0, 0usize);
    for i in (0..labels.len()).filter(|&i| labels[i] == emotion) {
        for j in 0..labels.len() {
            if j == i || topics[j] == topics[i] {
                continue;
            }
            if labels[j] == emotion {
                ws += cos[i][j];
                wn += 1;
            } else {
                cs += cos[i][j];
                cn += 1;
            }
        }
    }
    if wn == 0 || cn == 0 {
        return f64::NAN;
    }
    ws / wn as f64 - cs / cn as f64
}

struct PermutationCore<'a> {
    cos: &'a [Vec<f64>],
    labels: &'a [usize],
    topics: Vec<usize>,
    strata: Vec<Vec<usize>>,
}

impl<'a> PermutationCore<'a> {
    fn new(cos: &'a [Vec<f64>], labels: &'a [usize], topics: Vec<usize>) -> Self {
        let n_topics = topics.iter().max().map_or(0, |m| m + 1);
        let mut strata = vec![Vec::new(); n_topics];
        for (i, &t) in topics.iter().enumerate() {
            strata[t].push(i);
        }
        Self {
            cos,
            labels,
            topics,
            strata,
        }
    }

    fn check(&self, emotion: usize) -> Result<()> {
        let topics: std::collections::BTreeSet<usize> = (0..self.labels.len())
            .filter(|&i| self.labels[i] == emotion)
            .map(|i| self.topics[i])
            .collect();
        if topics.len() < 2 {
            return Err(LabError::Infeasible(format!(
                "emotion {emotion} appears in {} topic domain(s); the test needs two",
                topics.len()
            )));
        }
        if self.labels.iter().all(|&l| l == emotion) {
            return Err(LabError::Infeasible("no other-emotion stimuli to compare against".into()));
        }
        Ok(())
    }

    fn p_value(&self, emotion: usize, n_permutations: usize, seed: u64) -> (f64, f64) {
        let observed = topic_gap(self.cos, self.labels, &self.topics, emotion);
        let exceed: usize = (0..n_permutations)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
                let mut perm = self.labels.to_vec();
                for stratum in &self.strata {
                    let mut vals: Vec<usize> = stratum.iter().map(|&i| self.labels[i]).collect();
                    vals.shuffle(&mut rng);
                    for (&i, v) in stratum.iter().zip(vals) {
                        perm[i] = v;
                    }
                }
                let null = topic_gap(self.cos, &perm, &self.topics, emotion);
                usize::from(null >= observed - TIE_TOL * observed.abs().max(1.0) || null.is_nan())
            })
            .sum();
        (observed, (1 + exceed) as f64 / (1 + n_permutations) as f64)
    }
}

/// Permutation test of whether `emotion` clusters across topic domains.
///
/// The null permutes emotion labels within each topic stratum; replicate
/// `r` is seeded with `seed + r`. `q_bh` equals `p_raw` for a single test.
pub fn cross_topic_permutation(
    input: &GeometryInput,
    emotion: usize,
    n_permutations: usize,
    seed: u64,
) -> Result<PermutationResult> {
    let cos = input.cosine_matrix();
    let core = PermutationCore::new(&cos, &input.emotions, input.topic_codes());
    core.check(emotion)?;
    let (observed_gap, p_raw) = core.p_value(emotion, n_permutations, seed);
    Ok(PermutationResult {
        emotion,
        observed_gap,
        p_raw,
        q_bh: p_raw,
        n_permutations,
    })
}

/// Test every emotion present and adjust the family with Benjamini–Hochberg.
pub fn permutation_family(input: &GeometryInput, n_permutations: usize, seed: u64) -> Result<Vec<PermutationResult>> {
    let mut emotions = input.emotions.clone();
    emotions.sort_unstable();
    emotions.dedup();
    let cos = input.cosine_matrix();
    let core = PermutationCore::new(&cos, &input.emotions, input.topic_codes());
    let mut results = Vec::new();
    for e in emotions {
        core.check(e)?;
        let (observed_gap, p_raw) = core.p_value(e, n_permutations, seed);
        results.push(PermutationResult {
            emotion: e,
            observed_gap,
            p_raw,
            q_bh: p_raw,
            n_permutations,
        });
    }
    let q = bh_adjust(&results.iter().map(|r| r.p_raw).collect::<Vec<_>>());
    for (r, q) in results.iter_mut().zip(q) {
        r.q_bh = q;
    }
    Ok(results)
}

/// One stimulus's attention from its extraction position, `[layer][head][pos]`.
pub type AttentionRows = Vec<Vec<Vec<f32>>>;

/// Mean attention mass on masked positions per `[layer][head]`.
///
/// `attention[s][layer][head][pos]` is stimulus `s`'s attention from its
/// extraction position; `masks[s][pos]` marks keyword tokens.
pub fn keyword_attention_mass(attention: &[Vec<Vec<Vec<f32>>>], masks: &[Vec<bool>]) -> Result<Vec<Vec<f64>>> {
    if attention.len() != masks.len() {
        return Err(LabError::Validation("one keyword mask is needed per stimulus".into()));
    }
    let first = attention
        .first()
        .ok_or_else(|| LabError::Degenerate("no attention rows".into()))?;
    let (n_layers, n_heads) = (first.len(), first.first().map_or(0, Vec::len));
    let mut total = vec![vec![0.0; n_heads]; n_layers];
    for (att, mask) in attention.iter().zip(masks) {
        if att.len() != n_layers || att.iter().any(|l| l.len() != n_heads) {
            return Err(LabError::Validation("attention shapes differ between stimuli".into()));
        }
        for (l, layer) in att.iter().enumerate() {
            for (h, row) in layer.iter().enumerate() {
                if row.len() != mask.len() {
                    return Err(LabError::Validation("keyword mask does not match the attention row".into()));
                }
                total[l][h] += row
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|(&w, _)| f64::from(w))
                    .sum::<f64>();
            }
        }
    }
    let n = attention.len() as f64;
    Ok(total.into_iter().map(|r| r.into_iter().map(|v| v / n).collect()).collect())
}

/// Per-head keyword attention mass of set A minus that of set B.
pub fn attention_keyword_sensitivity(
    a: (&[AttentionRows], &[Vec<bool>]),
    b: (&[AttentionRows], &[Vec<bool>]),
) -> Result<Vec<Vec<f64>>> {
    let ma = keyword_attention_mass(a.0, a.1)?;
    let mb = keyword_attention_mass(b.0, b.1)?;
    if ma.len() != mb.len() || ma.iter().zip(&mb).any(|(x, y)| x.len() != y.len()) {
        return Err(LabError::Validation("attention shapes differ between the two sets".into()));
    }
    Ok(ma
        .iter()
        .zip(&mb)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect())
}

/// Keyword masks over each prompt's tokens up to its extraction index,
/// marking only keywords inside the target stimulus text.
pub fn target_keyword_masks(corpus: &Corpus, template: &PromptTemplate, lexicon: &Lexicon) -> Result<Vec<Vec<bool>>> {
    let tokenizer = Tokenizer::new();
    corpus
        .stimuli()
        .iter()
        .map(|s| {
            let prompt = render_prompt(template, s, &tokenizer)?;
            let start = prompt.text.len() - (s.text.len() + 1 + template.answer_marker.len());
            let spans: Vec<_> = keyword_spans(&s.text, lexicon)
                .into_iter()
                .map(|r| r.start + start..r.end + start)
                .collect();
            let (_, offsets) = tokenizer.encode_prompt_with_offsets(&prompt.text);
            Ok(offsets[..=prompt.extraction_index]
                .iter()
                .map(|o| {
                    o.as_ref()
                        .is_some_and(|r| spans.iter().any(|s| r.start < s.end && s.start < r.end))
                })
                .collect())
        })
        .collect()
}

/// Attention rows of `corpus`'s stimuli from a store, in corpus order.
pub fn corpus_attention(store: &ActivationStore, corpus: &Corpus) -> Result<Vec<Vec<Vec<Vec<f32>>>>> {
    store.check_complete(corpus)?;
    let all = store.attention()?;
    Ok(corpus
        .stimuli()
        .iter()
        .map(|s| all[store.index_of(&s.id).expect("checked complete")].clone())
        .collect())
}

/// Principal-component projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// One row per input vector, `k` columns.
    pub coordinates: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    /// `k` unit-norm components.
    pub components: Vec<Vec<f64>>,
}

/// Centered PCA via eigendecomposition of the sample covariance. Each
/// component's largest-magnitude coordinate is made positive.
pub fn pca_project(vectors: &[Vec<f64>], k: usize) -> Result<PcaResult> {
    let n = vectors.len();
    let d = vectors.first().map_or(0, Vec::len);
    if k == 0 || n < 2 || k > (n - 1).min(d) {
        return Err(LabError::Infeasible(format!(
            "cannot take {k} components from {n} vectors of width {d}"
        )));
    }
    let mut centered = DMatrix::<f64>::zeros(n, d);
    for j in 0..d {
        let m = vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64;
        for i in 0..n {
            centered[(i, j)] = vectors[i][j] - m;
        }
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return Err(LabError::Degenerate("vectors have zero variance".into()));
    }
    let mut components = Vec::with_capacity(k);
    let mut ratios = Vec::with_capacity(k);
    for &c in &order[..k] {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let pivot = (0..d).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        ratios.push(eig.eigenvalues[c].max(0.0) / total);
    }
    let coordinates = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| (0..d).map(|j| centered[(i, j)] * c[j]).sum())
                .collect()
        })
        .collect();
    Ok(PcaResult {
        coordinates,
        explained_variance_ratio: ratios,
        components,
    })
}

/// Generative design of a power simulation.
///
/// Each stimulus vector is `c + a u_e + σ z`: a shared component `c`, an
/// emotion direction `u_e` (orthonormal across emotions) scaled by
/// `a = sqrt(gap)`, and isotropic noise. With `|c|² = baseline_within - gap`
/// and `σ² dim = 1 - baseline_within`, the expected squared norm is 1,
/// the expected within-emotion cosine is about `baseline_within` and the
/// expected cross-emotion cosine is about `baseline_within - gap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDesign {
    pub n_emotions: usize,
    pub n_domains: usize,
    pub per_cell: usize,
    pub dim: usize,
    pub baseline_within: f64,
    pub n_permutations: usize,
    pub alpha: f64,
}

impl Default for PowerDesign {
    fn default() -> Self {
        Self {
            n_emotions: 8,
            n_domains: 3,
            per_cell: 4,
            dim: 64,
            baseline_within: 0.5,
            n_permutations: 199,
            alpha: 0.05,
        }
    }
}

/// Power at one planted gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub gap: f64,
    pub power: f64,
    /// Mean observed statistic across simulations.
    pub mean_observed: f64,
    /// Standard deviation of the observed statistic across simulations.
    pub sd_observed: f64,
}

impl PowerDesign {
    fn validate(&self, gaps: &[f64]) -> Result<()> {
        if self.n_emotions < 2 || self.n_domains < 2 || self.per_cell == 0 {
            return Err(LabError::Infeasible("power design needs two emotions, two domains and one item per cell".into()));
        }
        if self.dim < self.n_emotions + 1 {
            return Err(LabError::Infeasible("dimension too small for orthogonal emotion directions".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_within) {
            return Err(LabError::Infeasible("baseline_within must lie in [0, 1)".into()));
        }
        if let Some(g) = gaps.iter().find(|&&g| !(0.0..=self.baseline_within).contains(&g)) {
            return Err(LabError::Infeasible(format!("gap {g} outside [0, baseline_within]")));
        }
        Ok(())
    }

    /// One simulated dataset: vectors, emotion labels, topic codes.
    pub fn simulate(&self, gap: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        // Emotion directions are axes 1..=n_emotions, the shared direction axis 0.
        let c = (self.baseline_within - gap).max(0.0).sqrt();
        let a = gap.sqrt();
        let sigma = ((1.0 - self.baseline_within) / d as f64).sqrt();
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        let mut topics = Vec::new();
        for e in 0..self.n_emotions {
            for t in 0..self.n_domains {
                for _ in 0..self.per_cell {
                    let mut v: Vec<f64> = (0..d)
                        .map(|_| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                        .collect();
                    v[0] += c;
                    v[1 + e] += a;
                    vectors.push(v);
                    labels.push(e);
                    topics.push(t);
                }
            }
        }
        (vectors, labels, topics)
    }
}

/// Fraction of simulated datasets in which the cross-topic permutation
/// test of emotion 0 rejects at `alpha`, for each planted gap. Simulation
/// `s` at grid index `g` uses seed `seed + g * n_sims + s`.
pub fn power_simulation(design: &PowerDesign, gaps: &[f64], n_sims: usize, seed: u64) -> Result<Vec<PowerPoint>> {
    design.validate(gaps)?;
    if n_sims == 0 {
        return Err(LabError::Infeasible("power simulation needs at least one replicate".into()));
    }
    gaps.iter()
        .enumerate()
        .map(|(g, &gap)| {
            let outcomes: Vec<(bool, f64)> = (0..n_sims)
                .into_par_iter()
                .map(|s| {
                    let sim_seed = seed.wrapping_add((g * n_sims + s) as u64);
                    let (vectors, labels, topics) = design.simulate(gap, sim_seed);
                    let units: Vec<Vec<f64>> = vectors.iter().map(|v| unit(v)).collect();
                    let cos: Vec<Vec<f64>> = units.iter().map(|u| units.iter().map(|w| dot(u, w)).collect()).collect();
                    let core = PermutationCore::new(&cos, &labels, topics);
                    let (observed, p) = core.p_value(0, design.n_permutations, sim_seed ^ 0x9e37_79b9_7f4a_7c15);
                    (p < design.alpha, observed)
                })
                .collect();
            let observed: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
            let m = mean(&observed);
            let sd = if observed.len() > 1 {
                (observed.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (observed.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            Ok(PowerPoint {
                gap,
                power: outcomes.iter().filter(|o| o.0).count() as f64 / n_sims as f64,
                mean_observed: m,
                sd_observed: sd,
            })
        })
        .collect()
}
