// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer knockout sweeps.
//!
//! Each block's attention or feed-forward output is ablated (zeroed or
//! replaced by matched Gaussian noise) at every position, the corpus is
//! reclassified, and the accuracy drop against the unablated baseline is
//! reported in percentage points. Layers are zero-based block indices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::runtime::{classify, Capture, Intervention, Model, Sublayer, Tokenizer};
use crate::stimulus::{render_prompt, Corpus, EmotionLabel, PromptTemplate};

/// Default drop, in points, above which a layer counts as critical.
pub const DEFAULT_CRITICAL_THRESHOLD: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Zero,
    Noise,
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Zero => "zero",
            Ablation::Noise => "noise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Ablation::Zero),
            "noise" => Ok(Ablation::Noise),
            _ => Err(LabError::parse("ablation", format!("unknown ablation {s:?}"))),
        }
    }

    /// Intervention for one block; noise seeds are offset by the layer.
    pub fn intervention(self, layer: usize, sublayer: Sublayer, seed: u64) -> Intervention {
        match self {
            Ablation::Zero => Intervention::zero_ablate(layer, sublayer),
            Ablation::Noise => Intervention::noise_ablate(layer, sublayer, seed.wrapping_add(layer as u64)),
        }
    }
}

pub fn sublayer_name(sublayer: Sublayer) -> &'static str {
    match sublayer {
        Sublayer::Mhsa => "mhsa",
        Sublayer::Ffn => "ffn",
        Sublayer::Residual => "residual",
    }
}

/// Accuracy change from ablating one sublayer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoutResult {
    pub layer: usize,
    pub sublayer: Sublayer,
    pub ablation: Ablation,
    pub baseline_acc: f64,
    pub ablated_acc: f64,
    /// `(baseline_acc - ablated_acc) * 100`.
    pub drop: f64,
    pub critical: bool,
}

/// Results for every layer of one sublayer kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoutSweep {
    pub sublayer: Sublayer,
    pub ablation: Ablation,
    pub threshold: f64,
    pub baseline_acc: f64,
    pub results: Vec<KnockoutResult>,
}

impl KnockoutSweep {
    pub fn critical_count(&self) -> usize {
        self.results.iter().filter(|r| r.critical).count()
    }

    pub fn critical_layers(&self) -> Vec<usize> {
        self.results.iter().filter(|r| r.critical).map(|r| r.layer).collect()
    }
}

/// Rendered prompts and gold labels for the emotional stimuli of a corpus.
pub struct Evaluation {
    prompts: Vec<(Vec<u32>, usize)>,
    gold: Vec<EmotionLabel>,
}

impl Evaluation {
    pub fn new(corpus: &Corpus, template: &PromptTemplate) -> Result<Self> {
        let tokenizer = Tokenizer::new();
        let mut prompts = Vec::new();
        let mut gold = Vec::new();
        for s in corpus.stimuli() {
            if let Some(e) = s.emotion {
                let p = render_prompt(template, s, &tokenizer)?;
                prompts.push((p.tokens, p.extraction_index));
                gold.push(e);
            }
        }
        if gold.is_empty() {
            return Err(LabError::Degenerate("corpus has no labelled stimuli".into()));
        }
        Ok(Self { prompts, gold })
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    /// Fraction of stimuli classified as their gold emotion.
    pub fn accuracy(&self, model: &Model, interventions: &[Intervention]) -> Result<f64> {
        let correct = self
            .prompts
            .par_iter()
            .zip(&self.gold)
            .map(|((tokens, ext), gold)| {
                let r = model.forward(tokens, *ext, interventions, Capture::none())?;
                Ok(usize::from(classify(&r) == *gold))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(correct.iter().sum::<usize>() as f64 / self.len() as f64)
    }
}

/// Ablate each block's `sublayer` in turn.
pub fn knockout_sweep(
    model: &Model,
    corpus: &Corpus,
    template: &PromptTemplate,
    sublayer: Sublayer,
    ablation: Ablation,
    seed: u64,
    threshold: f64,
) -> Result<KnockoutSweep> {
    if sublayer == Sublayer::Residual {
        return Err(LabError::Intervention("knockout targets mhsa or ffn".into()));
    }
    let eval = Evaluation::new(corpus, template)?;
    let baseline_acc = eval.accuracy(model, &[])?;
    let results = (0..model.config().n_layers)
        .map(|layer| {
            let ablated_acc = eval.accuracy(model, &[ablation.intervention(layer, sublayer, seed)])?;
            let drop = (baseline_acc - ablated_acc) * 100.0;
            Ok(KnockoutResult {
                layer,
                sublayer,
                ablation,
                baseline_acc,
                ablated_acc,
                drop,
                critical: drop > threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KnockoutSweep {
        sublayer,
        ablation,
        threshold,
        baseline_acc,
        results,
    })
}

/// Accuracy with every attention and feed-forward output zeroed, which
/// leaves embeddings, final norm and unembedding.
pub fn all_layers_zeroed_accuracy(model: &Model, corpus: &Corpus, template: &PromptTemplate) -> Result<f64> {
    let eval = Evaluation::new(corpus, template)?;
    let all: Vec<Intervention> = (0..model.config().n_layers)
        .flat_map(|l| [Intervention::zero_ablate(l, Sublayer::Mhsa), Intervention::zero_ablate(l, Sublayer::Ffn)])
        .collect();
    eval.accuracy(model, &all)
}

/// One row of the critical-count table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalRow {
    pub corpus: String,
    pub sublayer: Sublayer,
    pub ablation: Ablation,
    pub critical_count: usize,
    pub critical_layers: Vec<usize>,
    /// Drop per layer, in layer order.
    pub drops: Vec<f64>,
}

/// Critical counts per (corpus, sublayer, ablation) plus the drop matrix,
/// one row per sweep in the order given.
pub fn critical_summary(sweeps: &[(&str, &KnockoutSweep)]) -> Vec<CriticalRow> {
    sweeps
        .iter()
        .map(|(name, sweep)| CriticalRow {
            corpus: name.to_string(),
            sublayer: sweep.sublayer,
            ablation: sweep.ablation,
            critical_count: sweep.critical_count(),
            critical_layers: sweep.critical_layers(),
            drops: sweep.results.iter().map(|r| r.drop).collect(),
        })
        .collect()
}
