// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configuration file.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every analysis section carries an explicit seed.

use std::fs;
use std::path::{Path, PathBuf};

use affectscope::geometry::PowerDesign;
use affectscope::knockout::{Ablation, DEFAULT_CRITICAL_THRESHOLD};
use affectscope::patching::PatchCondition;
use affectscope::runtime::{ModelConfig, StreamKind, Sublayer, WeightSource, BYTE_VOCAB};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
    pub probe: ProbeSection,
    pub patch: PatchSection,
    pub knockout: KnockoutSection,
    pub geometry: GeometrySection,
    pub power: PowerSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    #[serde(default = "default_max_seq")]
    pub max_seq: usize,
    /// Seed of the random weights; ignored when `weights` is set.
    pub seed: u64,
    /// Weight file to load instead of seeded random weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub template: PathBuf,
    pub lexicon: PathBuf,
    pub set_a: PathBuf,
    pub set_b: PathBuf,
    pub set_b_neutral: PathBuf,
    pub set_c: PathBuf,
    /// Render prompts without the template's few-shot examples.
    #[serde(default)]
    pub zero_shot: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_l2")]
    pub l2_strength: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_resamples: usize,
    #[serde(default = "all_streams")]
    pub streams: Vec<StreamKind>,
    /// Residual layer of the frozen binary probe; defaults to the binary peak.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_layer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSection {
    pub seed: u64,
    #[serde(default = "default_pairs")]
    pub n_pairs: usize,
    #[serde(default = "residual")]
    pub stream: StreamKind,
    /// Capture layers to patch; defaults to every patchable layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    #[serde(default = "all_conditions")]
    pub conditions: Vec<PatchCondition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnockoutSection {
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "all_ablations")]
    pub ablations: Vec<Ablation>,
    #[serde(default = "both_sublayers")]
    pub sublayers: Vec<Sublayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub seed: u64,
    #[serde(default = "residual")]
    pub stream: StreamKind,
    /// Capture layer of the permutation test and PCA; defaults to the last.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(default = "default_permutations")]
    pub n_permutations: usize,
    #[serde(default = "default_components")]
    pub pca_components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    pub seed: u64,
    pub gaps: Vec<f64>,
    #[serde(default = "default_sims")]
    pub n_sims: usize,
    #[serde(default = "default_power_permutations")]
    pub n_permutations: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_emotions")]
    pub n_emotions: usize,
    #[serde(default = "default_domains")]
    pub n_domains: usize,
    #[serde(default = "default_per_cell")]
    pub per_cell: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_baseline")]
    pub baseline_within: f64,
}

impl PowerSection {
    pub fn design(&self) -> PowerDesign {
        PowerDesign {
            n_emotions: self.n_emotions,
            n_domains: self.n_domains,
            per_cell: self.per_cell,
            dim: self.dim,
            baseline_within: self.baseline_within,
            n_permutations: self.n_permutations,
            alpha: self.alpha,
        }
    }
}

fn default_max_seq() -> usize {
    1024
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
fn all_streams() -> Vec<StreamKind> {
    StreamKind::ALL.to_vec()
}
fn default_pairs() -> usize {
    16
}
fn residual() -> StreamKind {
    StreamKind::Residual
}
fn all_conditions() -> Vec<PatchCondition> {
    PatchCondition::ALL.to_vec()
}
fn default_threshold() -> f64 {
    DEFAULT_CRITICAL_THRESHOLD
}
fn all_ablations() -> Vec<Ablation> {
    vec![Ablation::Zero, Ablation::Noise]
}
fn both_sublayers() -> Vec<Sublayer> {
    vec![Sublayer::Mhsa, Sublayer::Ffn]
}
fn default_permutations() -> usize {
    affectscope::geometry::DEFAULT_PERMUTATIONS
}
fn default_components() -> usize {
    2
}
fn default_sims() -> usize {
    500
}
fn default_power_permutations() -> usize {
    PowerDesign::default().n_permutations
}
fn default_alpha() -> f64 {
    PowerDesign::default().alpha
}
fn default_emotions() -> usize {
    PowerDesign::default().n_emotions
}
fn default_domains() -> usize {
    PowerDesign::default().n_domains
}
fn default_per_cell() -> usize {
    PowerDesign::default().per_cell
}
fn default_dim() -> usize {
    PowerDesign::default().dim
}
fn default_baseline() -> f64 {
    PowerDesign::default().baseline_within
}

/// A parsed config plus the directory its relative paths hang off.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { config, base };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        let d = &c.data;
        let mut paths = vec![
            ("data.template", &d.template),
            ("data.lexicon", &d.lexicon),
            ("data.set_a", &d.set_a),
            ("data.set_b", &d.set_b),
            ("data.set_b_neutral", &d.set_b_neutral),
            ("data.set_c", &d.set_c),
        ];
        if let Some(w) = &c.model.weights {
            paths.push(("model.weights", w));
        }
        for (key, p) in paths {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(CliError::Config(format!("{key}: {} does not exist", full.display())));
            }
        }
        self.model_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let fail = |m: &str| Err(CliError::Config(m.to_string()));
        if c.probe.folds < 2 {
            return fail("probe.folds must be at least 2");
        }
        if !(c.probe.l2_strength > 0.0) {
            return fail("probe.l2_strength must be positive");
        }
        if c.probe.streams.is_empty() {
            return fail("probe.streams is empty");
        }
        if c.patch.conditions.is_empty() || c.patch.n_pairs == 0 {
            return fail("patch needs at least one condition and one pair");
        }
        if c.knockout.ablations.is_empty() || c.knockout.sublayers.is_empty() {
            return fail("knockout needs at least one ablation and one sublayer");
        }
        if c.knockout.sublayers.contains(&Sublayer::Residual) {
            return fail("knockout.sublayers accepts mhsa and ffn only");
        }
        if c.geometry.n_permutations == 0 || c.geometry.pca_components == 0 {
            return fail("geometry.n_permutations and geometry.pca_components must be positive");
        }
        if c.power.gaps.is_empty() || c.power.n_sims == 0 {
            return fail("power needs a non-empty gap grid and at least one simulation");
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.config.model;
        ModelConfig {
            n_layers: m.n_layers,
            d_model: m.d_model,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            vocab_size: BYTE_VOCAB,
            max_seq: m.max_seq,
            seed: m.seed,
            weight_source: match &m.weights {
                Some(p) => WeightSource::File { path: self.resolve(p) },
                None => WeightSource::SeededRandom,
            },
        }
    }

    /// Replace every analysis seed.
    pub fn override_seeds(&mut self, seed: u64) {
        let c = &mut self.config;
        c.probe.seed = seed;
        c.patch.seed = seed;
        c.knockout.seed = seed;
        c.geometry.seed = seed;
        c.power.seed = seed;
    }
}
