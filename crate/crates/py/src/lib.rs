// SPDX-License-Identifier: MIT OR Apache-2.0

//! Python bindings for `affectscope`.
//!
//! Corpora, templates, lexicons, models and activation stores are exposed
//! as classes; experiments are plain functions returning dicts and lists.

use std::path::PathBuf;

use affectscope::geometry::{self, GeometryInput, Pairing, PowerDesign};
use affectscope::knockout::{self, Ablation};
use affectscope::lexicon::{self, Lexicon};
use affectscope::patching::{self, PatchCondition};
use affectscope::probing::{self, ProbeSpec, ProbeTask, Source};
use affectscope::runtime::{
    self, ActivationStore, Capture, CaptureFlags, ExtractOptions, LabelReadout, ModelConfig, StreamKind,
    Sublayer, Tokenizer, WeightSource, BYTE_VOCAB,
};
use affectscope::stats;
use affectscope::stimulus::{self, factorial_audit, render_prompt};
use affectscope::LabError;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: LabError) -> PyErr {
    match e {
        LabError::Io { .. } => PyIOError::new_err(e.to_string()),
        LabError::Parse { .. }
        | LabError::Validation(_)
        | LabError::MarkerNotFound(_)
        | LabError::Degenerate(_)
        | LabError::Infeasible(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_task(s: &str) -> PyResult<ProbeTask> {
    match s {
        "binary" | "binary_emotional_vs_neutral" => Ok(ProbeTask::BinaryEmotionalVsNeutral),
        "eight_class" => Ok(ProbeTask::EightClass),
        _ => Err(PyValueError::new_err(format!("unknown probe task {s:?}"))),
    }
}

fn parse_sublayer(s: &str) -> PyResult<Sublayer> {
    match s {
        "mhsa" => Ok(Sublayer::Mhsa),
        "ffn" => Ok(Sublayer::Ffn),
        _ => Err(PyValueError::new_err(format!("unknown sublayer {s:?}; expected mhsa or ffn"))),
    }
}

fn parse_pairing(s: &str) -> PyResult<Pairing> {
    match s {
        "cross_set" => Ok(Pairing::CrossSetSameEmotion),
        "cross_topic" => Ok(Pairing::CrossTopicWithinEmotion),
        _ => Err(PyValueError::new_err(format!("unknown pairing {s:?}; expected cross_set or cross_topic"))),
    }
}

/// A validated stimulus set.
#[pyclass(name = "Corpus", module = "pyaffectscope", frozen)]
struct PyCorpus(stimulus::Corpus);

#[pymethods]
impl PyCorpus {
    /// Load a JSONL corpus, with an optional leading design line.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        stimulus::load_corpus(path).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        stimulus::Corpus::from_jsonl(text, "<python>").map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn ids(&self) -> Vec<String> {
        self.0.stimuli().iter().map(|s| s.id.clone()).collect()
    }

    fn content_hash(&self) -> String {
        self.0.content_hash()
    }

    /// Stimuli as dicts with `id`, `text`, `emotion`, `topic_domain` and
    /// `set_tag`.
    fn stimuli<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.0
            .stimuli()
            .iter()
            .map(|s| {
                let d = PyDict::new(py);
                d.set_item("id", &s.id)?;
                d.set_item("text", &s.text)?;
                d.set_item("emotion", s.emotion.map(|e| e.name()))?;
                d.set_item("topic_domain", &s.topic_domain)?;
                d.set_item("set_tag", s.set_tag.as_str())?;
                Ok(d)
            })
            .collect()
    }

    /// One-line summary of the emotion by domain design check.
    fn factorial_summary(&self) -> String {
        factorial_audit(&self.0).summary()
    }
}

/// Prompt layout: preamble, few-shot examples, item prefix, answer marker.
#[pyclass(name = "PromptTemplate", module = "pyaffectscope", frozen)]
struct PyTemplate(stimulus::PromptTemplate);

#[pymethods]
impl PyTemplate {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        stimulus::PromptTemplate::load(path).map(Self).map_err(err)
    }

    /// The built-in template without few-shot examples.
    #[staticmethod]
    fn default() -> Self {
        Self(stimulus::PromptTemplate::default())
    }

    fn zero_shot(&self) -> Self {
        Self(self.0.zero_shot())
    }

    /// Render the prompt for stimulus `id` of `corpus`; returns
    /// `(text, tokens, extraction_index)`.
    fn render(&self, corpus: &PyCorpus, id: &str) -> PyResult<(String, Vec<u32>, usize)> {
        let s = corpus
            .0
            .get(id)
            .ok_or_else(|| PyValueError::new_err(format!("no stimulus {id}")))?;
        let p = render_prompt(&self.0, s, &Tokenizer::new()).map_err(err)?;
        Ok((p.text, p.tokens, p.extraction_index))
    }
}

/// Emotion and valence keyword lists.
#[pyclass(name = "Lexicon", module = "pyaffectscope", frozen)]
struct PyLexicon(Lexicon);

#[pymethods]
impl PyLexicon {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Lexicon::load(path).map(Self).map_err(err)
    }

    /// Keyword hits, valence counts, polarity and invisibility of `text`.
    fn analyze<'py>(&self, py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyDict>> {
        let r = lexicon::analyze(text, &self.0);
        let d = PyDict::new(py);
        d.set_item("emotion_hits", r.emotion_hits.clone())?;
        d.set_item("pos_count", r.pos_count)?;
        d.set_item("neg_count", r.neg_count)?;
        d.set_item("polarity", r.polarity)?;
        d.set_item("invisible", r.invisible)?;
        Ok(d)
    }

    /// Fraction of `corpus` with no emotion keyword and no valence word.
    fn fraction_invisible(&self, corpus: &PyCorpus) -> Option<f64> {
        lexicon::audit(&corpus.0, &self.0).overall().fraction_invisible()
    }
}

/// A decoder-only transformer over byte tokens.
#[pyclass(name = "Model", module = "pyaffectscope", frozen)]
struct PyModel(runtime::Model);

#[pymethods]
impl PyModel {
    /// Seeded random weights, or weights read from `weights` when given.
    /// The label readout follows `template` (default template otherwise).
    #[new]
    #[pyo3(signature = (n_layers=4, d_model=64, n_heads=4, d_ff=256, seed=0, max_seq=1024, template=None, weights=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_layers: usize,
        d_model: usize,
        n_heads: usize,
        d_ff: usize,
        seed: u64,
        max_seq: usize,
        template: Option<&PyTemplate>,
        weights: Option<PathBuf>,
    ) -> PyResult<Self> {
        let config = ModelConfig {
            n_layers,
            d_model,
            n_heads,
            d_ff,
            vocab_size: BYTE_VOCAB,
            max_seq,
            seed,
            weight_source: weights.map_or(WeightSource::SeededRandom, |path| WeightSource::File { path }),
        };
        let readout = match template {
            Some(t) => LabelReadout::from_template(&t.0, &Tokenizer::new()).map_err(err)?,
            None => LabelReadout::default(),
        };
        runtime::Model::from_config(config, readout).map(Self).map_err(err)
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.0.fingerprint().to_string()
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.0.config().n_layers
    }

    /// Forward pass; returns label logits, the predicted label and the
    /// residual stream at the extraction position for every layer.
    fn forward<'py>(&self, py: Python<'py>, tokens: Vec<u32>, extraction_index: usize) -> PyResult<Bound<'py, PyDict>> {
        let r = self
            .0
            .forward(&tokens, extraction_index, &[], Capture::residual_only())
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("label_logits", r.label_logits.to_vec())?;
        d.set_item("predicted", runtime::classify(&r).name())?;
        d.set_item("residual", r.streams.residual)?;
        Ok(d)
    }

    /// Predicted emotion for each stimulus of `corpus`, in corpus order.
    fn classify(&self, corpus: &PyCorpus, template: &PyTemplate) -> PyResult<Vec<&'static str>> {
        let tokenizer = Tokenizer::new();
        corpus
            .0
            .stimuli()
            .iter()
            .map(|s| {
                let p = render_prompt(&template.0, s, &tokenizer).map_err(err)?;
                let r = self
                    .0
                    .forward(&p.tokens, p.extraction_index, &[], Capture::none())
                    .map_err(err)?;
                Ok(runtime::classify(&r).name())
            })
            .collect()
    }
}

/// Cached activations of one corpus.
#[pyclass(name = "ActivationStore", module = "pyaffectscope", frozen)]
struct PyStore(ActivationStore);

#[pymethods]
impl PyStore {
    #[staticmethod]
    fn open(path: PathBuf) -> PyResult<Self> {
        ActivationStore::open(path).map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn model_fingerprint(&self) -> String {
        self.0.manifest().model_fingerprint.clone()
    }

    fn ids(&self) -> Vec<String> {
        self.0.manifest().stimulus_ids.clone()
    }

    /// Rows of stream `h`, `a` or `m` at `layer`, in store order.
    fn matrix(&self, stream: &str, layer: usize) -> PyResult<Vec<Vec<f32>>> {
        let s = StreamKind::parse(stream).map_err(err)?;
        self.0.matrix(s, layer).map_err(err)
    }

    fn content_hash(&self) -> PyResult<String> {
        self.0.content_hash().map_err(err)
    }
}

/// Extract every stream and attention row of `corpus` into `directory`,
/// resuming a partial store. Returns the computed, skipped and total counts.
#[pyfunction]
#[pyo3(signature = (model, corpus, template, directory, max_new=None))]
fn extract<'py>(
    py: Python<'py>,
    model: &PyModel,
    corpus: &PyCorpus,
    template: &PyTemplate,
    directory: PathBuf,
    max_new: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let s = runtime::extract_corpus(
        &model.0,
        &corpus.0,
        &template.0,
        CaptureFlags::all(),
        directory,
        ExtractOptions { max_new },
    )
    .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("computed", s.computed)?;
    d.set_item("skipped", s.skipped)?;
    d.set_item("total", s.total)?;
    Ok(d)
}

/// Cross-validated logistic probe on in-memory rows.
#[pyfunction]
#[pyo3(signature = (x, y, task="eight_class", folds=5, l2_strength=1e-2, seed=0, bootstrap_resamples=1000))]
fn train_probe<'py>(
    py: Python<'py>,
    x: Vec<Vec<f32>>,
    y: Vec<usize>,
    task: &str,
    folds: usize,
    l2_strength: f64,
    seed: u64,
    bootstrap_resamples: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = ProbeSpec {
        folds,
        l2_strength,
        seed,
        bootstrap_resamples,
        ..ProbeSpec::new(parse_task(task)?, StreamKind::Residual, 0)
    };
    let r = probing::train_probe(&x, &y, &spec).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("auroc_mean", r.auroc_mean)?;
    d.set_item("fold_aurocs", r.fold_aurocs)?;
    d.set_item("ci_low", r.ci_low)?;
    d.set_item("ci_high", r.ci_high)?;
    d.set_item("n", r.n)?;
    Ok(d)
}

/// Probe every layer of one stream over stores paired with their corpora.
/// Returns `(peak_layer, [auroc_mean per layer])`.
#[pyfunction]
#[pyo3(signature = (stores, corpora, task="eight_class", stream="h", folds=5, seed=0, bootstrap_resamples=200))]
#[allow(clippy::too_many_arguments)]
fn layer_sweep(
    stores: Vec<PyRef<'_, PyStore>>,
    corpora: Vec<PyRef<'_, PyCorpus>>,
    task: &str,
    stream: &str,
    folds: usize,
    seed: u64,
    bootstrap_resamples: usize,
) -> PyResult<(usize, Vec<f64>)> {
    if stores.len() != corpora.len() {
        return Err(PyValueError::new_err("one corpus is needed per store"));
    }
    let sources: Vec<Source<'_>> = stores.iter().map(|s| &s.0).zip(corpora.iter().map(|c| &c.0)).collect();
    let spec = ProbeSpec {
        folds,
        seed,
        bootstrap_resamples,
        ..ProbeSpec::new(parse_task(task)?, StreamKind::parse(stream).map_err(err)?, 0)
    };
    let sweep = probing::layer_sweep(&sources, &spec).map_err(err)?;
    Ok((sweep.peak_layer, sweep.results.iter().map(|r| r.auroc_mean).collect()))
}

/// Patch sampled (source, target) pairs; returns one dict per condition,
/// layer and success metric.
#[pyfunction]
#[pyo3(signature = (model, template, stores, corpora, condition, n_pairs, layers, stream="h", seed=0))]
#[allow(clippy::too_many_arguments)]
fn patch_experiment<'py>(
    py: Python<'py>,
    model: &PyModel,
    template: &PyTemplate,
    stores: Vec<PyRef<'_, PyStore>>,
    corpora: Vec<PyRef<'_, PyCorpus>>,
    condition: &str,
    n_pairs: usize,
    layers: Vec<usize>,
    stream: &str,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    if stores.len() != corpora.len() {
        return Err(PyValueError::new_err("one corpus is needed per store"));
    }
    let corpus_refs: Vec<&stimulus::Corpus> = corpora.iter().map(|c| &c.0).collect();
    let sources: Vec<Source<'_>> = stores.iter().map(|s| &s.0).zip(corpus_refs.iter().copied()).collect();
    let condition = PatchCondition::parse(condition).map_err(err)?;
    let stream = StreamKind::parse(stream).map_err(err)?;
    let pairs = patching::generate_pairs(&corpus_refs, condition, n_pairs, seed, stream, &layers).map_err(err)?;
    let report = patching::run_patch_experiment(&model.0, &template.0, &sources, &pairs).map_err(err)?;
    report
        .summaries
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("condition", s.condition.as_str())?;
            d.set_item("layer", s.layer)?;
            d.set_item("metric", s.metric.as_str())?;
            d.set_item("n", s.n)?;
            d.set_item("successes", s.successes)?;
            d.set_item("success_rate", s.success_rate)?;
            d.set_item("wilson_low", s.wilson_low)?;
            d.set_item("wilson_high", s.wilson_high)?;
            d.set_item("cohens_h_vs_chance", s.cohens_h_vs_chance)?;
            Ok(d)
        })
        .collect()
}

/// Ablate `sublayer` (`mhsa` or `ffn`) at each layer in turn; returns the
/// baseline accuracy and `(layer, ablated_acc, drop_points, critical)` rows.
#[pyfunction]
#[pyo3(signature = (model, corpus, template, sublayer="mhsa", ablation="zero", seed=0, threshold=knockout::DEFAULT_CRITICAL_THRESHOLD))]
fn knockout_sweep(
    model: &PyModel,
    corpus: &PyCorpus,
    template: &PyTemplate,
    sublayer: &str,
    ablation: &str,
    seed: u64,
    threshold: f64,
) -> PyResult<(f64, Vec<(usize, f64, f64, bool)>)> {
    let sweep = knockout::knockout_sweep(
        &model.0,
        &corpus.0,
        &template.0,
        parse_sublayer(sublayer)?,
        Ablation::parse(ablation).map_err(err)?,
        seed,
        threshold,
    )
    .map_err(err)?;
    Ok((
        sweep.baseline_acc,
        sweep
            .results
            .iter()
            .map(|r| (r.layer, r.ablated_acc, r.drop, r.critical))
            .collect(),
    ))
}

fn geometry_input(
    vectors: Vec<Vec<f64>>,
    emotions: Vec<usize>,
    sets: Option<Vec<String>>,
    topics: Option<Vec<String>>,
) -> PyResult<GeometryInput> {
    let n = vectors.len();
    let sets = sets.unwrap_or_else(|| vec![String::new(); n]);
    let topics = topics.unwrap_or_else(|| vec![String::new(); n]);
    GeometryInput::new(vectors, emotions, sets, topics).map_err(err)
}

/// Within- versus cross-emotion cosine gap under a pairing restriction.
#[pyfunction]
#[pyo3(signature = (vectors, emotions, sets=None, topics=None, pairing="cross_topic"))]
fn cosine_gap<'py>(
    py: Python<'py>,
    vectors: Vec<Vec<f64>>,
    emotions: Vec<usize>,
    sets: Option<Vec<String>>,
    topics: Option<Vec<String>>,
    pairing: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let input = geometry_input(vectors, emotions, sets, topics)?;
    let r = geometry::cosine_gap(&input, parse_pairing(pairing)?).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("within_emotion_mean", r.within_emotion_mean)?;
    d.set_item("cross_emotion_mean", r.cross_emotion_mean)?;
    d.set_item("gap", r.gap)?;
    d.set_item("cohens_d", r.cohens_d)?;
    d.set_item("n_within", r.n_within)?;
    d.set_item("n_cross", r.n_cross)?;
    Ok(d)
}

/// Cross-topic permutation test for one emotion; returns
/// `(observed_gap, p_value)`.
#[pyfunction]
#[pyo3(signature = (vectors, emotions, topics, emotion, n_permutations=geometry::DEFAULT_PERMUTATIONS, seed=0))]
fn cross_topic_permutation(
    vectors: Vec<Vec<f64>>,
    emotions: Vec<usize>,
    topics: Vec<String>,
    emotion: usize,
    n_permutations: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let input = geometry_input(vectors, emotions, None, Some(topics))?;
    let r = geometry::cross_topic_permutation(&input, emotion, n_permutations, seed).map_err(err)?;
    Ok((r.observed_gap, r.p_raw))
}

/// Simulated power of the cross-topic permutation test at each planted
/// gap; returns `(gap, power, mean_observed, sd_observed)` rows.
#[pyfunction]
#[pyo3(signature = (gaps, n_sims=500, seed=0, n_permutations=199, alpha=0.05))]
fn power_simulation(
    gaps: Vec<f64>,
    n_sims: usize,
    seed: u64,
    n_permutations: usize,
    alpha: f64,
) -> PyResult<Vec<(f64, f64, f64, f64)>> {
    let design = PowerDesign {
        n_permutations,
        alpha,
        ..PowerDesign::default()
    };
    Ok(geometry::power_simulation(&design, &gaps, n_sims, seed)
        .map_err(err)?
        .into_iter()
        .map(|p| (p.gap, p.power, p.mean_observed, p.sd_observed))
        .collect())
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    stats::auroc(&scores, &labels).map_err(err)
}

#[pyfunction]
fn macro_ovr_auroc(scores: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> PyResult<f64> {
    stats::macro_ovr_auroc(&scores, &labels, n_classes).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (successes, n, confidence=0.95))]
fn wilson_interval(successes: usize, n: usize, confidence: f64) -> (f64, f64) {
    stats::wilson_interval(successes, n, confidence)
}

#[pyfunction]
fn cohens_h(p1: f64, p2: f64) -> f64 {
    stats::cohens_h(p1, p2)
}

#[pyfunction]
fn cohens_d(a: Vec<f64>, b: Vec<f64>) -> f64 {
    stats::cohens_d(&a, &b)
}

#[pyfunction]
fn bh_adjust(p_values: Vec<f64>) -> Vec<f64> {
    stats::bh_adjust(&p_values)
}

/// Welch's t-test; returns `(t, df, p_value)`.
#[pyfunction]
fn welch_t(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, Option<f64>, Option<f64>)> {
    let s = stats::welch_t(&a, &b).map_err(err)?;
    Ok((s.statistic, s.df, s.p_value))
}

#[pymodule]
fn pyaffectscope(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyTemplate>()?;
    m.add_class::<PyLexicon>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyStore>()?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(train_probe, m)?)?;
    m.add_function(wrap_pyfunction!(layer_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(patch_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(knockout_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_gap, m)?)?;
    m.add_function(wrap_pyfunction!(cross_topic_permutation, m)?)?;
    m.add_function(wrap_pyfunction!(power_simulation, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(macro_ovr_auroc, m)?)?;
    m.add_function(wrap_pyfunction!(wilson_interval, m)?)?;
    m.add_function(wrap_pyfunction!(cohens_h, m)?)?;
    m.add_function(wrap_pyfunction!(cohens_d, m)?)?;
    m.add_function(wrap_pyfunction!(bh_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
