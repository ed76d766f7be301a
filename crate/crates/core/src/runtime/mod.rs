// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoder-only transformer runtime with activation capture and causal
//! interventions.

mod model;
mod store;
mod tokenizer;
pub mod toy;
mod weights;

pub use model::{
    classify, ActivationRecord, Capture, CapturedStreams, ForwardResult, Intervention,
    InterventionKind, LabelReadout, Model, StreamKind, Sublayer, DEFAULT_LABEL_STRINGS,
};
pub use store::{
    extract_corpus, template_hash, ActivationStore, CaptureFlags, ExtractOptions, ExtractSummary,
    Manifest,
};
pub use tokenizer::{Tokenizer, BOS, BYTE_VOCAB, PAD};
pub use weights::{BlockWeights, ModelConfig, WeightSource, Weights};
