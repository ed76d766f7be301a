// SPDX-License-Identifier: MIT OR Apache-2.0

//! # affectscope
//!
//! Tooling for mechanistic experiments on how transformer language models
//! process emotion: an instrumented decoder-only runtime plus the analyses
//! that run on top of it.
//!
//! - [`stimulus`]: labeled stimulus corpora and few-shot prompt rendering.
//! - [`lexicon`]: keyword sentiment baseline ("invisible" certification).
//! - [`runtime`]: forward pass with h/a/m capture, patching and ablation.
//! - [`probing`]: layer-wise linear probes, transfer and frozen scoring.
//! - [`patching`]: activation-patching experiments and success statistics.
//! - [`knockout`]: layer ablation sweeps and critical-layer counts.
//! - [`geometry`]: cosine gaps, silhouettes, permutation tests, PCA, power.
//! - [`stats`]: shared statistical primitives.

pub mod error;
pub mod geometry;
mod hash;
pub mod knockout;
pub mod lexicon;
pub mod patching;
pub mod probing;
pub mod runtime;
pub mod stats;
pub mod stimulus;
pub mod tensorfile;

pub use error::{LabError, Result};
pub use stimulus::{Corpus, EmotionLabel, PromptTemplate, SetTag, Stimulus};
