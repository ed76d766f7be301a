// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear probes over captured activations.
//!
//! A probe is L2-regularized multinomial logistic regression on features
//! standardized with training-fold statistics. The objective is
//!
//! `L(W, b) = mean_i CE(softmax(W x_i + b), y_i) + (λ / 2) ||W||²`
//!
//! with an unregularized intercept, minimized by accelerated gradient
//! descent with backtracking line search and function-value restarts until
//! the gradient norm drops below `tol`. Held-out scores are class
//! log-probabilities; binary probes rank by the log-odds of the positive
//! class.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::runtime::{ActivationStore, StreamKind};
use crate::stats::{auroc, bootstrap_ci, macro_ovr_auroc};
use crate::stimulus::{Corpus, Stimulus};
use crate::tensorfile::{Tensor, TensorFile};

/// What a probe predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTask {
    /// Emotional (class 1) versus neutral (class 0).
    BinaryEmotionalVsNeutral,
    /// The eight emotion labels.
    EightClass,
}

impl ProbeTask {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeTask::BinaryEmotionalVsNeutral => "binary_emotional_vs_neutral",
            ProbeTask::EightClass => "eight_class",
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            ProbeTask::BinaryEmotionalVsNeutral => 2,
            ProbeTask::EightClass => 8,
        }
    }

    /// Class index of a stimulus, or `None` when it does not take part in
    /// this task (neutral items in the eight-class task).
    pub fn label_of(self, stimulus: &Stimulus) -> Option<usize> {
        match self {
            ProbeTask::BinaryEmotionalVsNeutral => Some(usize::from(stimulus.emotion.is_some())),
            ProbeTask::EightClass => stimulus.emotion.map(|e| e.code()),
        }
    }
}

/// Probe hyperparameters for one (stream, layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub task: ProbeTask,
    pub stream: StreamKind,
    pub layer: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_l2")]
    pub l2_strength: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_resamples: usize,
}

fn default_folds() -> usize {
    5
}
fn default_l2() -> f64 {
    1e-2
}
fn default_max_iters() -> usize {
    2000
}
fn default_tol() -> f64 {
    1e-6
}
fn default_bootstrap() -> usize {
    1000
}

impl ProbeSpec {
    pub fn new(task: ProbeTask, stream: StreamKind, layer: usize) -> Self {
        Self {
            task,
            stream,
            layer,
            folds: default_folds(),
            l2_strength: default_l2(),
            max_iters: default_max_iters(),
            tol: default_tol(),
            seed: 0,
            bootstrap_resamples: default_bootstrap(),
        }
    }

    pub fn at_layer(&self, layer: usize) -> Self {
        Self { layer, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(LabError::Validation("probes need at least two folds".into()));
        }
        if !(self.l2_strength > 0.0 && self.l2_strength.is_finite()) {
            return Err(LabError::Validation("l2_strength must be positive".into()));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(LabError::Validation("tol and max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Standardization plus multinomial weights, ready to score new rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedProbe {
    pub task: ProbeTask,
    pub stream: StreamKind,
    pub layer: usize,
    pub model_fingerprint: Option<String>,
    pub n_classes: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Row-major `[n_classes, dim]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl TrainedProbe {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn logits(&self, row: &[f32]) -> Vec<f64> {
        let z: Vec<f64> = row
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (m, s))| (f64::from(v) - m) / s)
            .collect();
        logits_of(&self.weights, &self.bias, &z, self.n_classes)
    }

    /// Class log-probabilities.
    pub fn log_proba(&self, row: &[f32]) -> Vec<f64> {
        log_softmax(&self.logits(row))
    }

    pub fn proba(&self, row: &[f32]) -> Vec<f64> {
        self.log_proba(row).into_iter().map(f64::exp).collect()
    }

    /// Ranking score for AUROC: positive-class log-odds for two classes.
    fn binary_score(&self, row: &[f32]) -> f64 {
        let z = self.logits(row);
        z[1] - z[0]
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut file = TensorFile {
            metadata: serde_json::json!({
                "kind": "probe",
                "task": self.task,
                "stream": self.stream,
                "layer": self.layer,
                "model_fingerprint": self.model_fingerprint,
            }),
            ..TensorFile::default()
        };
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        let d = self.dim();
        let k = self.n_classes;
        file.insert("weights", Tensor::new(vec![k, d], f32s(&self.weights)).expect("shape"));
        file.insert("bias", Tensor::new(vec![k], f32s(&self.bias)).expect("shape"));
        file.insert("mean", Tensor::new(vec![d], f32s(&self.mean)).expect("shape"));
        file.insert("scale", Tensor::new(vec![d], f32s(&self.scale)).expect("shape"));
        file
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            task: ProbeTask,
            stream: StreamKind,
            layer: usize,
            model_fingerprint: Option<String>,
        }
        let meta: Meta = serde_json::from_value(file.metadata.clone())
            .map_err(|e| LabError::parse("probe metadata", e))?;
        let f64s = |t: &Tensor| t.data.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
        let weights = file.get("weights")?;
        if weights.shape.len() != 2 {
            return Err(LabError::parse("probe file", "weights must be two-dimensional"));
        }
        let (k, d) = (weights.shape[0], weights.shape[1]);
        let probe = Self {
            task: meta.task,
            stream: meta.stream,
            layer: meta.layer,
            model_fingerprint: meta.model_fingerprint,
            n_classes: k,
            mean: f64s(file.get("mean")?),
            scale: f64s(file.get("scale")?),
            weights: f64s(weights),
            bias: f64s(file.get("bias")?),
        };
        if probe.bias.len() != k || probe.mean.len() != d || probe.scale.len() != d {
            return Err(LabError::parse("probe file", "inconsistent tensor shapes"));
        }
        Ok(probe)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }
}

/// Cross-validated probe outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub spec: ProbeSpec,
    pub auroc_mean: f64,
    pub fold_aurocs: Vec<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weights: Option<TrainedProbe>,
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

fn logits_of(w: &[f64], b: &[f64], x: &[f64], k: usize) -> Vec<f64> {
    let d = x.len();
    (0..k)
        .map(|c| b[c] + w[c * d..(c + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

/// Objective value and gradient at `params = [W (k×d) | b (k)]`.
pub(crate) fn loss_and_grad(
    params: &[f64],
    x: &[Vec<f64>],
    y: &[usize],
    k: usize,
    lambda: f64,
) -> (f64, Vec<f64>) {
    let d = x[0].len();
    let (w, b) = params.split_at(k * d);
    let n = x.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let lp = log_softmax(&logits_of(w, b, row, k));
        loss -= lp[label];
        for c in 0..k {
            let r = lp[c].exp() - f64::from(u8::from(c == label));
            let gw = &mut grad[c * d..(c + 1) * d];
            for (g, v) in gw.iter_mut().zip(row) {
                *g += r * v;
            }
            grad[k * d + c] += r;
        }
    }
    for g in &mut grad {
        *g /= n;
    }
    let mut penalty = 0.0;
    for (g, wv) in grad[..k * d].iter_mut().zip(w) {
        *g += lambda * wv;
        penalty += wv * wv;
    }
    (loss / n + 0.5 * lambda * penalty, grad)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimize the probe objective from zero.
fn optimize(x: &[Vec<f64>], y: &[usize], k: usize, spec: &ProbeSpec) -> Vec<f64> {
    let d = x[0].len();
    let mut theta = vec![0.0; k * d + k];
    let (mut f_theta, mut g_theta) = loss_and_grad(&theta, x, y, k, spec.l2_strength);
    if norm(&g_theta) < spec.tol {
        return theta;
    }
    let mut look = theta.clone();
    let (mut f_look, mut g_look) = (f_theta, g_theta.clone());
    let mut momentum = 1.0f64;
    let mut lipschitz = 1.0f64;
    for _ in 0..spec.max_iters {
        // Backtracking on the sufficient-decrease condition.
        let g2 = g_look.iter().map(|v| v * v).sum::<f64>();
        let (next, f_next, g_next) = loop {
            let cand: Vec<f64> = look.iter().zip(&g_look).map(|(p, g)| p - g / lipschitz).collect();
            let (f, g) = loss_and_grad(&cand, x, y, k, spec.l2_strength);
            if f <= f_look - 0.5 * g2 / lipschitz || lipschitz > 1e12 {
                break (cand, f, g);
            }
            lipschitz *= 2.0;
        };
        let converged = norm(&g_next) < spec.tol;
        if f_next > f_theta {
            // Restart momentum from the better point.
            momentum = 1.0;
            look = theta.clone();
            f_look = f_theta;
            g_look = g_theta.clone();
            continue;
        }
        let m_next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / m_next;
        look = next.iter().zip(&theta).map(|(n, t)| n + beta * (n - t)).collect();
        theta = next;
        f_theta = f_next;
        g_theta = g_next;
        momentum = m_next;
        if converged {
            break;
        }
        let (f, g) = loss_and_grad(&look, x, y, k, spec.l2_strength);
        f_look = f;
        g_look = g;
        lipschitz = (lipschitz * 0.9).max(1e-6);
    }
    theta
}

fn to_f64(x: &[Vec<f32>]) -> Vec<Vec<f64>> {
    x.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect()
}

/// Mean and scale per column; zero-variance columns get scale 1.
fn standardizer(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() as f64;
    let d = x[0].len();
    let mut mean = vec![0.0; d];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for row in x {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn check_inputs(x: &[Vec<f32>], y: &[usize]) -> Result<(usize, usize)> {
    if x.len() != y.len() {
        return Err(LabError::Degenerate(format!("{} rows for {} labels", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(LabError::Degenerate("no training rows".into()));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(LabError::Degenerate("rows must share a positive width".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(LabError::Degenerate("non-finite feature".into()));
    }
    let k = y.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(LabError::Degenerate("probes need at least two classes".into()));
    }
    Ok((k, d))
}

/// Fit one probe on all rows.
pub fn fit_probe(x: &[Vec<f32>], y: &[usize], spec: &ProbeSpec) -> Result<TrainedProbe> {
    spec.validate()?;
    let (k, _) = check_inputs(x, y)?;
    let present: BTreeSet<usize> = y.iter().copied().collect();
    if present.len() < 2 {
        return Err(LabError::Degenerate("probes need at least two classes".into()));
    }
    Ok(fit_rows(&to_f64(x), y, k, spec))
}

fn fit_rows(x: &[Vec<f64>], y: &[usize], k: usize, spec: &ProbeSpec) -> TrainedProbe {
    let (mean, scale) = standardizer(x);
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(mean.iter().zip(&scale)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();
    let theta = optimize(&z, y, k, spec);
    let d = mean.len();
    TrainedProbe {
        task: spec.task,
        stream: spec.stream,
        layer: spec.layer,
        model_fingerprint: None,
        n_classes: k,
        mean,
        scale,
        weights: theta[..k * d].to_vec(),
        bias: theta[k * d..].to_vec(),
    }
}

/// Fold assignment with every class spread round-robin across folds after
/// a seeded shuffle. Each fold holds `floor` or `ceil` of `count / folds`
/// items of every class.
pub fn stratified_folds(y: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in y.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; y.len()];
    let mut offset = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            assignment[i] = (offset + j) % folds;
        }
        offset += members.len();
    }
    assignment
}

fn scores_auroc(scores: &[Vec<f64>], y: &[usize], k: usize) -> Result<f64> {
    if k == 2 {
        let s: Vec<f64> = scores.iter().map(|r| r[1] - r[0]).collect();
        let l: Vec<bool> = y.iter().map(|&c| c == 1).collect();
        auroc(&s, &l)
    } else {
        macro_ovr_auroc(scores, y, k)
    }
}

/// Stratified K-fold probe with bootstrap confidence interval.
///
/// Fold AUROCs are computed on each held-out fold. The interval is a
/// class-stratified percentile bootstrap over the pooled out-of-fold scores,
/// widened if needed so that it contains `auroc_mean`.
pub fn train_probe(x: &[Vec<f32>], y: &[usize], spec: &ProbeSpec) -> Result<ProbeResult> {
    spec.validate()?;
    let (k, _) = check_inputs(x, y)?;
    let mut counts = vec![0usize; k];
    for &c in y {
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n < spec.folds) {
        return Err(LabError::Degenerate(format!(
            "class {c} has {} samples, fewer than {} folds",
            counts[c], spec.folds
        )));
    }
    let xf = to_f64(x);
    let assignment = stratified_folds(y, spec.folds, spec.seed);
    let fold_out: Vec<(Vec<usize>, Vec<Vec<f64>>)> = (0..spec.folds)
        .into_par_iter()
        .map(|fold| {
            let (train, test): (Vec<usize>, Vec<usize>) =
                (0..y.len()).partition(|&i| assignment[i] != fold);
            let tx: Vec<Vec<f64>> = train.iter().map(|&i| xf[i].clone()).collect();
            let ty: Vec<usize> = train.iter().map(|&i| y[i]).collect();
            let probe = fit_rows(&tx, &ty, k, spec);
            let scores = test
                .iter()
                .map(|&i| {
                    let z: Vec<f64> = xf[i]
                        .iter()
                        .zip(probe.mean.iter().zip(&probe.scale))
                        .map(|(v, (m, s))| (v - m) / s)
                        .collect();
                    log_softmax(&logits_of(&probe.weights, &probe.bias, &z, k))
                })
                .collect();
            (test, scores)
        })
        .collect();

    let mut fold_aurocs = Vec::with_capacity(spec.folds);
    let mut pooled = vec![Vec::new(); y.len()];
    for (test, scores) in fold_out {
        let ty: Vec<usize> = test.iter().map(|&i| y[i]).collect();
        fold_aurocs.push(scores_auroc(&scores, &ty, k)?);
        for (i, s) in test.into_iter().zip(scores) {
            pooled[i] = s;
        }
    }
    let auroc_mean = fold_aurocs.iter().sum::<f64>() / fold_aurocs.len() as f64;
    let (lo, hi) = bootstrap_ci(
        y,
        |idx| {
            let s: Vec<Vec<f64>> = idx.iter().map(|&i| pooled[i].clone()).collect();
            let l: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            scores_auroc(&s, &l, k).unwrap_or(0.5)
        },
        spec.bootstrap_resamples.max(1),
        spec.seed,
        true,
        0.95,
    )?;
    Ok(ProbeResult {
        spec: spec.clone(),
        auroc_mean,
        fold_aurocs,
        ci_low: lo.min(auroc_mean),
        ci_high: hi.max(auroc_mean),
        n: y.len(),
        weights: None,
    })
}

/// Rows and labels drawn from one or more stores.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeData {
    pub ids: Vec<String>,
    pub x: Vec<Vec<f32>>,
    pub y: Vec<usize>,
}

/// One store and the corpus whose stimuli to read from it.
pub type Source<'a> = (&'a ActivationStore, &'a Corpus);

fn shared_fingerprint(sources: &[Source<'_>]) -> Result<(String, usize)> {
    let (first, _) = sources
        .first()
        .ok_or_else(|| LabError::Store("no activation stores given".into()))?;
    let m = first.manifest();
    for (store, _) in sources {
        let o = store.manifest();
        if o.model_fingerprint != m.model_fingerprint || o.d_model != m.d_model {
            return Err(LabError::Store(
                "activation stores come from different model configurations".into(),
            ));
        }
    }
    Ok((m.model_fingerprint.clone(), m.n_layers))
}

/// Gather task-labelled rows for one (stream, layer) from every source.
pub fn collect(sources: &[Source<'_>], task: ProbeTask, stream: StreamKind, layer: usize) -> Result<ProbeData> {
    shared_fingerprint(sources)?;
    let mut data = ProbeData {
        ids: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
    };
    for (store, corpus) in sources {
        store.check_complete(corpus)?;
        let labelled: Vec<(&str, usize)> = corpus
            .stimuli()
            .iter()
            .filter_map(|s| task.label_of(s).map(|l| (s.id.as_str(), l)))
            .collect();
        let ids: Vec<&str> = labelled.iter().map(|(id, _)| *id).collect();
        data.x.extend(store.rows_for(stream, layer, &ids)?);
        data.y.extend(labelled.iter().map(|(_, l)| *l));
        data.ids.extend(ids.iter().map(|s| s.to_string()));
    }
    Ok(data)
}

/// Probe results across the layers of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSweep {
    pub task: ProbeTask,
    pub stream: StreamKind,
    pub n_layers: usize,
    pub results: Vec<ProbeResult>,
    pub peak_layer: usize,
    pub normalized_depth: f64,
}

impl LayerSweep {
    /// Build from per-layer results; the peak is the first maximum.
    pub fn from_results(results: Vec<ProbeResult>, n_layers: usize) -> Result<Self> {
        let first = results
            .first()
            .ok_or_else(|| LabError::Degenerate("empty layer sweep".into()))?;
        let (task, stream) = (first.spec.task, first.spec.stream);
        let mut best = first;
        for r in &results[1..] {
            if r.auroc_mean > best.auroc_mean {
                best = r;
            }
        }
        let peak_layer = best.spec.layer;
        Ok(Self {
            task,
            stream,
            n_layers,
            peak_layer,
            normalized_depth: peak_layer as f64 / n_layers.max(1) as f64,
            results,
        })
    }

    pub fn at_layer(&self, layer: usize) -> Option<&ProbeResult> {
        self.results.iter().find(|r| r.spec.layer == layer)
    }

    pub fn peak(&self) -> &ProbeResult {
        self.at_layer(self.peak_layer).expect("peak layer is in the sweep")
    }
}

/// Probe every given layer of a matrix stack sharing labels `y`.
pub fn sweep_matrices(
    layers: &[(usize, Vec<Vec<f32>>)],
    y: &[usize],
    template: &ProbeSpec,
    n_layers: usize,
) -> Result<LayerSweep> {
    let results = layers
        .iter()
        .map(|(layer, x)| train_probe(x, y, &template.at_layer(*layer)))
        .collect::<Result<Vec<_>>>()?;
    LayerSweep::from_results(results, n_layers)
}

/// Probe every layer of `template.stream` held by the stores.
pub fn layer_sweep(sources: &[Source<'_>], template: &ProbeSpec) -> Result<LayerSweep> {
    let (_, n_layers) = shared_fingerprint(sources)?;
    let mut layers = Vec::new();
    let mut labels = None;
    for layer in template.stream.layers(n_layers) {
        let data = collect(sources, template.task, template.stream, layer)?;
        labels.get_or_insert(data.y);
        layers.push((layer, data.x));
    }
    sweep_matrices(&layers, &labels.unwrap_or_default(), template, n_layers)
}

/// AUROC of a probe fit on one set and evaluated on another.
pub fn transfer_matrices(
    train_x: &[Vec<f32>],
    train_y: &[usize],
    test_x: &[Vec<f32>],
    test_y: &[usize],
    spec: &ProbeSpec,
) -> Result<f64> {
    let probe = fit_probe(train_x, train_y, spec)?;
    let (k_test, d) = check_inputs(test_x, test_y)?;
    if d != probe.dim() {
        return Err(LabError::Store("train and test features differ in width".into()));
    }
    let train_classes: BTreeSet<usize> = train_y.iter().copied().collect();
    let test_classes: BTreeSet<usize> = test_y.iter().copied().collect();
    if !test_classes.is_subset(&train_classes) || k_test > probe.n_classes {
        return Err(LabError::Validation(
            "test labels fall outside the training label space".into(),
        ));
    }
    if probe.n_classes == 2 {
        let s: Vec<f64> = test_x.iter().map(|r| probe.binary_score(r)).collect();
        let l: Vec<bool> = test_y.iter().map(|&c| c == 1).collect();
        auroc(&s, &l)
    } else {
        let s: Vec<Vec<f64>> = test_x.iter().map(|r| probe.log_proba(r)).collect();
        macro_ovr_auroc(&s, test_y, probe.n_classes)
    }
}

/// Store-level transfer between two sets of sources.
pub fn transfer(train: &[Source<'_>], test: &[Source<'_>], spec: &ProbeSpec) -> Result<f64> {
    let all: Vec<Source<'_>> = train.iter().chain(test).copied().collect();
    shared_fingerprint(&all)?;
    let a = collect(train, spec.task, spec.stream, spec.layer)?;
    let b = collect(test, spec.task, spec.stream, spec.layer)?;
    transfer_matrices(&a.x, &a.y, &b.x, &b.y, spec)
}

/// Binary-versus-eight-class comparison at the binary peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissociationRow {
    pub stream: StreamKind,
    pub layer: usize,
    pub binary_auroc: f64,
    pub eight_class_auroc: f64,
    /// `(binary - eight_class) * 100`.
    pub gap_pp: f64,
}

pub fn dissociation_gap(binary_auroc: f64, eight_class_auroc: f64) -> f64 {
    (binary_auroc - eight_class_auroc) * 100.0
}

pub fn dissociation_report(binary: &LayerSweep, eight_class: &LayerSweep) -> Result<DissociationRow> {
    let layer = binary.peak_layer;
    let b = binary.peak().auroc_mean;
    let e = eight_class
        .at_layer(layer)
        .ok_or_else(|| LabError::Store(format!("eight-class sweep lacks layer {layer}")))?
        .auroc_mean;
    Ok(DissociationRow {
        stream: binary.stream,
        layer,
        binary_auroc: b,
        eight_class_auroc: e,
        gap_pp: dissociation_gap(b, e),
    })
}

/// Positive-class probabilities of a frozen binary probe on held-out rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenScore {
    pub ids: Vec<String>,
    pub probabilities: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub above_0_5: usize,
    pub above_0_8: usize,
    pub n: usize,
}

pub fn frozen_score_rows(probe: &TrainedProbe, ids: Vec<String>, x: &[Vec<f32>]) -> Result<FrozenScore> {
    if probe.n_classes != 2 {
        return Err(LabError::Validation("frozen scoring needs a binary probe".into()));
    }
    if x.is_empty() {
        return Err(LabError::Degenerate("no rows to score".into()));
    }
    if x.iter().any(|r| r.len() != probe.dim()) {
        return Err(LabError::Store("rows do not match the probe width".into()));
    }
    let probabilities: Vec<f64> = x.iter().map(|r| probe.log_proba(r)[1].exp()).collect();
    let n = probabilities.len();
    let mut sorted = probabilities.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    Ok(FrozenScore {
        ids,
        mean: probabilities.iter().sum::<f64>() / n as f64,
        median,
        above_0_5: probabilities.iter().filter(|&&p| p > 0.5).count(),
        above_0_8: probabilities.iter().filter(|&&p| p > 0.8).count(),
        n,
        probabilities,
    })
}

/// Score every stimulus of `corpus` with a frozen binary probe.
pub fn frozen_score(probe: &TrainedProbe, store: &ActivationStore, corpus: &Corpus) -> Result<FrozenScore> {
    if let Some(fp) = &probe.model_fingerprint {
        if *fp != store.manifest().model_fingerprint {
            return Err(LabError::Store("probe was trained on a different model".into()));
        }
    }
    store.check_complete(corpus)?;
    let ids: Vec<&str> = corpus.stimuli().iter().map(|s| s.id.as_str()).collect();
    let x = store.rows_for(probe.stream, probe.layer, &ids)?;
    frozen_score_rows(probe, ids.iter().map(|s| s.to_string()).collect(), &x)
}

/// Fit a probe on the sources and tag it with their model fingerprint.
pub fn fit_from_sources(sources: &[Source<'_>], spec: &ProbeSpec) -> Result<TrainedProbe> {
    let (fingerprint, _) = shared_fingerprint(sources)?;
    let data = collect(sources, spec.task, spec.stream, spec.layer)?;
    let mut probe = fit_probe(&data.x, &data.y, spec)?;
    probe.model_fingerprint = Some(fingerprint);
    Ok(probe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    /// `per_class` samples of each of `k` classes around random means
    /// separated by `sep` noise standard deviations.
    fn planted(k: usize, per_class: usize, d: usize, sep: f64, seed: u64) -> (Vec<Vec<f32>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let means: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
                let n = norm(&v);
                v.into_iter().map(|x| x / n * sep).collect()
            })
            .collect();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for c in 0..k {
            for _ in 0..per_class {
                x.push(means[c].iter().map(|m| (m + normal.sample(&mut rng)) as f32).collect());
                y.push(c);
            }
        }
        (x, y)
    }

    fn spec(task: ProbeTask) -> ProbeSpec {
        ProbeSpec::new(task, StreamKind::Residual, 0)
    }

    /// Nearest-centroid classifier scored with the same folds.
    fn centroid_oracle(x: &[Vec<f32>], y: &[usize], folds: usize, seed: u64) -> f64 {
        let k = y.iter().max().unwrap() + 1;
        let assignment = stratified_folds(y, folds, seed);
        let d = x[0].len();
        let mut total = 0.0;
        for fold in 0..folds {
            let mut cent = vec![vec![0.0f64; d]; k];
            let mut cnt = vec![0.0; k];
            for i in (0..y.len()).filter(|&i| assignment[i] != fold) {
                cnt[y[i]] += 1.0;
                for j in 0..d {
                    cent[y[i]][j] += f64::from(x[i][j]);
                }
            }
            for c in 0..k {
                for v in &mut cent[c] {
                    *v /= cnt[c];
                }
            }
            let test: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] == fold).collect();
            let scores: Vec<Vec<f64>> = test
                .iter()
                .map(|&i| {
                    (0..k)
                        .map(|c| -(0..d).map(|j| (f64::from(x[i][j]) - cent[c][j]).powi(2)).sum::<f64>())
                        .collect()
                })
                .collect();
            let ty: Vec<usize> = test.iter().map(|&i| y[i]).collect();
            total += macro_ovr_auroc(&scores, &ty, k).unwrap();
        }
        total / folds as f64
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..5 {
            let (k, d, n) = (3 + trial % 2, 4, 9);
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let y: Vec<usize> = (0..n).map(|i| i % k).collect();
            let theta: Vec<f64> = (0..k * d + k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = loss_and_grad(&theta, &x, &y, k, 0.3);
            for j in 0..theta.len() {
                let h = 1e-5;
                let mut p = theta.clone();
                p[j] += h;
                let up = loss_and_grad(&p, &x, &y, k, 0.3).0;
                p[j] -= 2.0 * h;
                let down = loss_and_grad(&p, &x, &y, k, 0.3).0;
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-8);
                assert!(rel < 1e-5, "component {j}: analytic {} vs numeric {fd}", g[j]);
            }
        }
    }

    #[test]
    fn optimizer_reaches_stationary_point() {
        let (x, y) = planted(3, 10, 5, 2.0, 1);
        let xf = to_f64(&x);
        let s = spec(ProbeTask::EightClass);
        let theta = optimize(&xf, &y, 3, &s);
        let (_, g) = loss_and_grad(&theta, &xf, &y, 3, s.l2_strength);
        assert!(norm(&g) < 1e-5);
    }

    #[test]
    fn planted_eight_class_matches_centroid_oracle() {
        let (x, y) = planted(8, 12, 64, 5.0, 11);
        let r = train_probe(&x, &y, &spec(ProbeTask::EightClass)).unwrap();
        let oracle = centroid_oracle(&x, &y, 5, 0);
        assert!(r.auroc_mean >= 0.99, "{}", r.auroc_mean);
        assert!(oracle >= 0.99);
        assert!((r.auroc_mean - oracle).abs() <= 0.02);
        assert!(r.ci_low <= r.auroc_mean && r.auroc_mean <= r.ci_high);
        let mean = r.fold_aurocs.iter().sum::<f64>() / 5.0;
        assert_eq!(mean, r.auroc_mean);
    }

    #[test]
    fn separated_data_scores_exactly_one() {
        let (x, y) = planted(4, 10, 8, 40.0, 2);
        let r = train_probe(&x, &y, &spec(ProbeTask::EightClass)).unwrap();
        assert_eq!(r.auroc_mean, 1.0);
    }

    #[test]
    fn permuted_labels_hover_at_chance() {
        let (x, mut y) = planted(8, 12, 64, 5.0, 11);
        let mut s = spec(ProbeTask::EightClass);
        s.bootstrap_resamples = 10;
        for seed in 0..20 {
            y.shuffle(&mut ChaCha8Rng::seed_from_u64(100 + seed));
            let r = train_probe(&x, &y, &s).unwrap();
            assert!((0.35..=0.65).contains(&r.auroc_mean), "seed {seed}: {}", r.auroc_mean);
        }
    }

    #[test]
    fn duplicated_features_with_matched_penalty() {
        let (x, y) = planted(2, 20, 6, 1.5, 5);
        let s = spec(ProbeTask::BinaryEmotionalVsNeutral);
        let base = train_probe(&x, &y, &s).unwrap();
        let doubled: Vec<Vec<f32>> = x.iter().map(|r| r.iter().chain(r).copied().collect()).collect();
        let mut s2 = s.clone();
        s2.l2_strength *= 2.0;
        let dup = train_probe(&doubled, &y, &s2).unwrap();
        assert!((base.auroc_mean - dup.auroc_mean).abs() < 1e-3);
    }

    #[test]
    fn folds_are_stratified() {
        let y: Vec<usize> = (0..53).map(|i| [0, 0, 1, 2, 2, 2, 3][i % 7]).collect();
        let k = 4;
        for folds in [2, 3, 5] {
            let a = stratified_folds(&y, folds, 9);
            for f in 0..folds {
                for c in 0..k {
                    let total = y.iter().filter(|&&v| v == c).count() as f64;
                    let inside = (0..y.len()).filter(|&i| a[i] == f && y[i] == c).count() as f64;
                    assert!((inside - total / folds as f64).abs() < 1.0);
                }
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = planted(3, 8, 10, 1.0, 4);
        let s = spec(ProbeTask::EightClass);
        let a = train_probe(&x, &y, &s).unwrap();
        let b = train_probe(&x, &y, &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.auroc_mean.to_bits(), b.auroc_mean.to_bits());
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let s = spec(ProbeTask::EightClass);
        let x = vec![vec![0.0f32; 3]; 10];
        assert!(train_probe(&x, &[0; 10], &s).is_err());
        let y: Vec<usize> = (0..10).map(|i| usize::from(i < 3)).collect();
        assert!(train_probe(&x, &y, &s).is_err(), "class 1 has fewer rows than folds");
        let mut bad = x.clone();
        bad[0][0] = f32::NAN;
        let y: Vec<usize> = (0..10).map(|i| i % 2).collect();
        assert!(train_probe(&bad, &y, &ProbeSpec { folds: 2, ..s.clone() }).is_err());
        assert!(train_probe(&x, &y, &ProbeSpec { folds: 1, ..s }).is_err());
    }

    #[test]
    fn constant_features_give_chance_and_earliest_peak() {
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let layers: Vec<(usize, Vec<Vec<f32>>)> = (0..4).map(|l| (l, vec![vec![1.5f32; 4]; 40])).collect();
        let sweep = sweep_matrices(&layers, &y, &spec(ProbeTask::BinaryEmotionalVsNeutral), 3).unwrap();
        assert!(sweep.results.iter().all(|r| r.auroc_mean == 0.5));
        assert_eq!(sweep.peak_layer, 0);
        assert_eq!(sweep.normalized_depth, 0.0);
    }

    #[test]
    fn sweep_finds_late_planted_signal() {
        let (signal, y) = planted(2, 80, 16, 4.0, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0f32, 1.0).unwrap();
        let layers: Vec<(usize, Vec<Vec<f32>>)> = (0..=6)
            .map(|l| {
                let x = if l >= 3 {
                    signal.clone()
                } else {
                    (0..y.len()).map(|_| (0..16).map(|_| normal.sample(&mut rng)).collect()).collect()
                };
                (l, x)
            })
            .collect();
        let sweep = sweep_matrices(&layers, &y, &spec(ProbeTask::BinaryEmotionalVsNeutral), 6).unwrap();
        assert!(sweep.peak_layer >= 3);
        for r in &sweep.results[..3] {
            assert!((0.35..=0.65).contains(&r.auroc_mean), "layer {}: {}", r.spec.layer, r.auroc_mean);
        }
        assert_eq!(sweep.normalized_depth, sweep.peak_layer as f64 / 6.0);
    }

    #[test]
    fn single_layer_sweep_depth() {
        let (x, y) = planted(2, 10, 4, 3.0, 1);
        let sweep = sweep_matrices(&[(5, x)], &y, &spec(ProbeTask::BinaryEmotionalVsNeutral), 8).unwrap();
        assert_eq!(sweep.results.len(), 1);
        assert_eq!(sweep.normalized_depth, 5.0 / 8.0);
    }

    #[test]
    fn transfer_on_same_data_upper_bounds_cv() {
        let (x, y) = planted(2, 20, 8, 1.0, 6);
        let s = spec(ProbeTask::BinaryEmotionalVsNeutral);
        let cv = train_probe(&x, &y, &s).unwrap().auroc_mean;
        let t = transfer_matrices(&x, &y, &x, &y, &s).unwrap();
        assert!(t >= cv);
    }

    #[test]
    fn transfer_rejects_unseen_labels() {
        let (x, y) = planted(2, 10, 4, 3.0, 1);
        let (tx, ty) = planted(3, 10, 4, 3.0, 2);
        assert!(transfer_matrices(&x, &y, &tx, &ty, &spec(ProbeTask::EightClass)).is_err());
    }

    #[test]
    fn dissociation_gap_in_points() {
        assert!((dissociation_gap(1.0, 0.933) - 6.7).abs() < 1e-9);
        assert_eq!(dissociation_gap(0.8, 0.8), 0.0);
    }

    #[test]
    fn frozen_scores_on_planted_sets() {
        let (x, y) = planted(2, 30, 12, 6.0, 21);
        let probe = fit_probe(&x, &y, &spec(ProbeTask::BinaryEmotionalVsNeutral)).unwrap();
        let pos: Vec<Vec<f32>> = x.iter().zip(&y).filter(|(_, &c)| c == 1).map(|(r, _)| r.clone()).collect();
        let neg: Vec<Vec<f32>> = x.iter().zip(&y).filter(|(_, &c)| c == 0).map(|(r, _)| r.clone()).collect();
        let ids = |n| (0..n).map(|i: usize| i.to_string()).collect();
        let p = frozen_score_rows(&probe, ids(pos.len()), &pos).unwrap();
        assert!(p.mean >= 0.95);
        let q = frozen_score_rows(&probe, ids(neg.len()), &neg).unwrap();
        assert!(q.mean <= 0.05);
        assert_eq!(q.above_0_5, 0);
        let one = frozen_score_rows(&probe, ids(1), &pos[..1]).unwrap();
        assert_eq!(one.n, 1);
        assert_eq!(one.median, one.mean);
    }

    #[test]
    fn probe_round_trips_through_tensor_file() {
        let (x, y) = planted(2, 10, 4, 3.0, 1);
        let mut probe = fit_probe(&x, &y, &spec(ProbeTask::BinaryEmotionalVsNeutral)).unwrap();
        probe.model_fingerprint = Some("abc".into());
        let bytes = probe.to_tensor_file().to_bytes();
        let back = TrainedProbe::from_tensor_file(&TensorFile::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.model_fingerprint.as_deref(), Some("abc"));
        assert_eq!(back.n_classes, 2);
        for (a, b) in back.weights.iter().zip(&probe.weights) {
            assert_eq!(*a, f64::from(*b as f32));
        }
    }

    #[test]
    fn negated_binary_scores_complement() {
        let (x, y) = planted(2, 15, 4, 1.0, 13);
        let probe = fit_probe(&x, &y, &spec(ProbeTask::BinaryEmotionalVsNeutral)).unwrap();
        let s: Vec<f64> = x.iter().map(|r| probe.binary_score(r)).collect();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let l: Vec<bool> = y.iter().map(|&c| c == 1).collect();
        let a = auroc(&s, &l).unwrap();
        assert!((a + auroc(&neg, &l).unwrap() - 1.0).abs() < 1e-9);
    }
}
