// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk activation store and the resumable corpus extraction that fills it.
//!
//! A store directory holds `manifest.json` plus one row-major little-endian
//! `f32` file per captured (stream, layer), named like `h_03.f32`, with one
//! `d_model`-wide row per stimulus in manifest order. `logits.f32` holds the
//! eight label logits per stimulus and, when attention was captured,
//! `attention.f32` holds each stimulus's `[layer][head][position]` rows
//! back to back.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{classify, Capture, Model, StreamKind};
use super::tokenizer::Tokenizer;
use crate::error::{LabError, Result};
use crate::stimulus::{render_prompt, Corpus, EmotionLabel, PromptTemplate};

const MANIFEST: &str = "manifest.json";
const LOGITS: &str = "logits.f32";
const ATTENTION: &str = "attention.f32";
const BATCH: usize = 16;

/// Which streams a store holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureFlags {
    pub h: bool,
    pub a: bool,
    pub m: bool,
    pub attention: bool,
}

impl CaptureFlags {
    pub fn all() -> Self {
        Self {
            h: true,
            a: true,
            m: true,
            attention: true,
        }
    }

    fn to_capture(self) -> Capture {
        Capture {
            residual: self.h,
            attention_out: self.a,
            mlp_out: self.m,
            attention_weights: self.attention,
        }
    }

    pub fn has(&self, stream: StreamKind) -> bool {
        match stream {
            StreamKind::Residual => self.h,
            StreamKind::Attention => self.a,
            StreamKind::Mlp => self.m,
        }
    }
}

/// Store manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_fingerprint: String,
    pub corpus_hash: String,
    pub template_hash: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub capture: CaptureFlags,
    pub stimulus_ids: Vec<String>,
    pub extraction_indices: Vec<usize>,
    /// Predicted label code per stimulus.
    pub predictions: Vec<usize>,
}

impl Manifest {
    fn attention_len(&self, extraction_index: usize) -> usize {
        self.n_layers * self.n_heads * (extraction_index + 1)
    }
}

/// Stable digest of a prompt template.
pub fn template_hash(template: &PromptTemplate) -> String {
    crate::hash::sha256_hex(&serde_json::to_vec(template).expect("template serializes"))
}

fn stream_file(stream: StreamKind, layer: usize) -> String {
    format!("{}_{layer:02}.f32", stream.as_str())
}

fn stored_layers(m: &Manifest) -> Vec<(StreamKind, usize)> {
    StreamKind::ALL
        .iter()
        .filter(|s| m.capture.has(**s))
        .flat_map(|&s| s.layers(m.n_layers).map(move |l| (s, l)))
        .collect()
}

/// Read access to a completed or partial store.
#[derive(Debug, Clone)]
pub struct ActivationStore {
    dir: PathBuf,
    manifest: Manifest,
}

impl ActivationStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST);
        let content = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&content).map_err(|e| LabError::parse(path.display().to_string(), e))?;
        Ok(Self { dir, manifest })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.manifest.stimulus_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.stimulus_ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.manifest.stimulus_ids.iter().position(|s| s == id)
    }

    /// Error unless every stimulus of `corpus` is present in this store.
    pub fn check_complete(&self, corpus: &Corpus) -> Result<()> {
        let have: HashSet<&str> = self.manifest.stimulus_ids.iter().map(String::as_str).collect();
        let missing = corpus.stimuli().iter().filter(|s| !have.contains(s.id.as_str())).count();
        if missing > 0 {
            return Err(LabError::Store(format!(
                "store {} lacks {missing} of {} stimuli",
                self.dir.display(),
                corpus.len()
            )));
        }
        Ok(())
    }

    fn read_rows(&self, name: &str, width: usize) -> Result<Vec<Vec<f32>>> {
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(|e| LabError::io(&path, e))?;
        let n = self.len();
        if bytes.len() < n * width * 4 {
            return Err(LabError::Store(format!("{} is truncated", path.display())));
        }
        Ok(bytes[..n * width * 4]
            .chunks_exact(width * 4)
            .map(|row| {
                row.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect()
            })
            .collect())
    }

    /// All rows of one (stream, layer) in manifest order.
    pub fn matrix(&self, stream: StreamKind, layer: usize) -> Result<Vec<Vec<f32>>> {
        if !self.manifest.capture.has(stream) || !stream.layers(self.manifest.n_layers).contains(&layer) {
            return Err(LabError::Store(format!(
                "store does not hold stream {} at layer {layer}",
                stream.as_str()
            )));
        }
        self.read_rows(&stream_file(stream, layer), self.manifest.d_model)
    }

    /// Rows for the given stimulus ids, in that order.
    pub fn rows_for(&self, stream: StreamKind, layer: usize, ids: &[&str]) -> Result<Vec<Vec<f32>>> {
        let all = self.matrix(stream, layer)?;
        ids.iter()
            .map(|id| {
                self.index_of(id)
                    .map(|i| all[i].clone())
                    .ok_or_else(|| LabError::Store(format!("stimulus {id} missing from store")))
            })
            .collect()
    }

    pub fn label_logits(&self) -> Result<Vec<Vec<f32>>> {
        self.read_rows(LOGITS, 8)
    }

    pub fn predictions(&self) -> Vec<EmotionLabel> {
        self.manifest
            .predictions
            .iter()
            .map(|&c| EmotionLabel::from_code(c).expect("valid label code"))
            .collect()
    }

    /// Attention rows `[layer][head][position]` for every stimulus.
    pub fn attention(&self) -> Result<Vec<Vec<Vec<Vec<f32>>>>> {
        if !self.manifest.capture.attention {
            return Err(LabError::Store("store was extracted without attention capture".into()));
        }
        let path = self.dir.join(ATTENTION);
        let bytes = fs::read(&path).map_err(|e| LabError::io(&path, e))?;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let m = &self.manifest;
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.len());
        for &ext in &m.extraction_indices {
            let width = ext + 1;
            let len = m.attention_len(ext);
            let flat = values
                .get(offset..offset + len)
                .ok_or_else(|| LabError::Store(format!("{} is truncated", path.display())))?;
            offset += len;
            out.push(
                flat.chunks_exact(width * m.n_heads)
                    .map(|layer| layer.chunks_exact(width).map(<[f32]>::to_vec).collect())
                    .collect(),
            );
        }
        Ok(out)
    }

    /// Digest over the manifest and every data file.
    pub fn content_hash(&self) -> Result<String> {
        let mut names: Vec<String> = stored_layers(&self.manifest)
            .into_iter()
            .map(|(s, l)| stream_file(s, l))
            .collect();
        names.push(LOGITS.into());
        if self.manifest.capture.attention {
            names.push(ATTENTION.into());
        }
        names.push(MANIFEST.into());
        let mut all = Vec::new();
        for name in names {
            let path = self.dir.join(&name);
            all.extend_from_slice(name.as_bytes());
            all.extend(fs::read(&path).map_err(|e| LabError::io(&path, e))?);
        }
        Ok(crate::hash::sha256_hex(&all))
    }
}

/// Options for [`extract_corpus`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractOptions {
    /// Stop after this many new forward passes (simulates interruption).
    pub max_new: Option<usize>,
}

/// Counts from one extraction call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractSummary {
    /// Forward passes run by this call.
    pub computed: usize,
    /// Stimuli already in the store before this call.
    pub skipped: usize,
    /// Stimuli in the store after this call.
    pub total: usize,
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let tmp = dir.join("manifest.json.tmp");
    let bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    fs::write(&tmp, bytes).map_err(|e| LabError::io(&tmp, e))?;
    let path = dir.join(MANIFEST);
    fs::rename(&tmp, &path).map_err(|e| LabError::io(&path, e))
}

fn truncate_to(path: &Path, len: u64) -> Result<()> {
    let file = OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(false)
        .open(path)
        .map_err(|e| LabError::io(path, e))?;
    file.set_len(len).map_err(|e| LabError::io(path, e))
}

fn append(path: &Path, values: &[f32]) -> Result<()> {
    let mut file = OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| LabError::io(path, e))?;
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    file.write_all(&bytes).map_err(|e| LabError::io(path, e))
}

/// Run every stimulus of `corpus` through `model` and persist the captures.
///
/// Resumes an existing store in `dir`: stimuli already listed in its
/// manifest are skipped, and a manifest recorded for a different model,
/// corpus, template or capture set is an error.
pub fn extract_corpus(
    model: &Model,
    corpus: &Corpus,
    template: &PromptTemplate,
    capture: CaptureFlags,
    dir: impl AsRef<Path>,
    options: ExtractOptions,
) -> Result<ExtractSummary> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let cfg = model.config();
    let fresh = Manifest {
        model_fingerprint: model.fingerprint().to_string(),
        corpus_hash: corpus.content_hash(),
        template_hash: template_hash(template),
        n_layers: cfg.n_layers,
        n_heads: cfg.n_heads,
        d_model: cfg.d_model,
        capture,
        stimulus_ids: Vec::new(),
        extraction_indices: Vec::new(),
        predictions: Vec::new(),
    };
    let mut manifest = if dir.join(MANIFEST).exists() {
        let existing = ActivationStore::open(dir)?.manifest;
        let mismatch = |what: &str| {
            Err(LabError::Store(format!(
                "existing store at {} was built with a different {what}",
                dir.display()
            )))
        };
        if existing.model_fingerprint != fresh.model_fingerprint {
            return mismatch("model");
        }
        if existing.corpus_hash != fresh.corpus_hash {
            return mismatch("corpus");
        }
        if existing.template_hash != fresh.template_hash {
            return mismatch("template");
        }
        if existing.capture != fresh.capture {
            return mismatch("capture set");
        }
        existing
    } else {
        fresh
    };

    // Drop rows written after the last manifest update.
    let n_done = manifest.stimulus_ids.len() as u64;
    let row_bytes = (cfg.d_model * 4) as u64;
    for (s, l) in stored_layers(&manifest) {
        truncate_to(&dir.join(stream_file(s, l)), n_done * row_bytes)?;
    }
    truncate_to(&dir.join(LOGITS), n_done * 32)?;
    if capture.attention {
        let len: usize = manifest
            .extraction_indices
            .iter()
            .map(|&e| manifest.attention_len(e))
            .sum();
        truncate_to(&dir.join(ATTENTION), len as u64 * 4)?;
    }
    write_manifest(dir, &manifest)?;

    let done: HashSet<String> = manifest.stimulus_ids.iter().cloned().collect();
    let mut todo: Vec<_> = corpus.stimuli().iter().filter(|s| !done.contains(&s.id)).collect();
    let skipped = corpus.len() - todo.len();
    if let Some(limit) = options.max_new {
        todo.truncate(limit);
    }
    let tokenizer = Tokenizer::new();
    let flags = capture.to_capture();
    let mut computed = 0;
    for batch in todo.chunks(BATCH) {
        let results: Vec<_> = batch
            .par_iter()
            .map(|s| {
                let prompt = render_prompt(template, s, &tokenizer)?;
                let result = model.forward(&prompt.tokens, prompt.extraction_index, &[], flags)?;
                Ok((prompt.extraction_index, result))
            })
            .collect::<Result<_>>()?;
        for (stimulus, (ext, result)) in batch.iter().zip(results) {
            for (s, l) in stored_layers(&manifest) {
                let row = result
                    .streams
                    .get(s, l)
                    .ok_or_else(|| LabError::Store("capture missing a requested stream".into()))?;
                append(&dir.join(stream_file(s, l)), row)?;
            }
            append(&dir.join(LOGITS), &result.label_logits)?;
            if let Some(att) = &result.attention {
                let flat: Vec<f32> = att.iter().flatten().flatten().copied().collect();
                append(&dir.join(ATTENTION), &flat)?;
            }
            manifest.stimulus_ids.push(stimulus.id.clone());
            manifest.extraction_indices.push(ext);
            manifest.predictions.push(classify(&result).code());
            computed += 1;
        }
        write_manifest(dir, &manifest)?;
    }
    Ok(ExtractSummary {
        computed,
        skipped,
        total: manifest.stimulus_ids.len(),
    })
}
