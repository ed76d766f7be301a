// SPDX-License-Identifier: MIT OR Apache-2.0

//! Instrumented forward pass.
//!
//! Blocks are pre-norm: `x += MHSA(LN1(x)); x += FFN(LN2(x))`, followed by
//! a final layer norm and the unembedding. Only the 8 readout tokens are
//! scored, at the extraction position.
//!
//! Layer indexing of captured streams:
//! - `h(0)` is the embedding output and `h(l)` is the residual stream after
//!   `l` blocks, so `h` has `n_layers + 1` entries.
//! - `a(l)` and `m(l)` for `l` in `1..=n_layers` are the attention and
//!   feed-forward outputs of block `l - 1`, so that
//!   `h(l) = h(l - 1) + a(l) + m(l)`.
//!
//! Interventions address blocks by zero-based index `layer < n_layers`.
//! A residual patch at `layer` overwrites `h(layer)` at one position before
//! block `layer` reads it; MHSA/FFN patches overwrite that sublayer's output
//! at one position before it is added to the residual. Ablations replace a
//! sublayer's output at every position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tokenizer::Tokenizer;
use super::weights::{BlockWeights, ModelConfig, WeightSource, Weights};
use crate::error::{LabError, Result};
use crate::stimulus::{EmotionLabel, PromptTemplate};
use crate::tensorfile::TensorFile;

const LN_EPS: f32 = 1e-5;

/// Answer strings whose first bytes are pairwise distinct.
pub const DEFAULT_LABEL_STRINGS: [&str; 8] = [
    "ecstasy",
    "admiration",
    "terror",
    "Amazement",
    "grief",
    "loathing",
    "rage",
    "vigilance",
];

/// The three activation streams read by probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StreamKind {
    /// Residual stream.
    #[serde(rename = "h")]
    Residual,
    /// Multi-head self-attention output.
    #[serde(rename = "a")]
    Attention,
    /// Feed-forward output.
    #[serde(rename = "m")]
    Mlp,
}

impl StreamKind {
    pub const ALL: [StreamKind; 3] = [StreamKind::Residual, StreamKind::Attention, StreamKind::Mlp];

    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Residual => "h",
            StreamKind::Attention => "a",
            StreamKind::Mlp => "m",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "h" => Ok(StreamKind::Residual),
            "a" => Ok(StreamKind::Attention),
            "m" => Ok(StreamKind::Mlp),
            _ => Err(LabError::parse("stream kind", format!("unknown stream {s:?}"))),
        }
    }

    /// Valid capture layers for this stream in an `n_layers` model.
    pub fn layers(self, n_layers: usize) -> std::ops::RangeInclusive<usize> {
        match self {
            StreamKind::Residual => 0..=n_layers,
            _ => 1..=n_layers,
        }
    }

    /// The sublayer an intervention on this stream targets.
    pub fn sublayer(self) -> Sublayer {
        match self {
            StreamKind::Residual => Sublayer::Residual,
            StreamKind::Attention => Sublayer::Mhsa,
            StreamKind::Mlp => Sublayer::Ffn,
        }
    }

    /// Block index whose intervention overwrites capture layer `layer`.
    pub fn intervention_block(self, layer: usize) -> Option<usize> {
        match self {
            StreamKind::Residual => Some(layer),
            _ => layer.checked_sub(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sublayer {
    Mhsa,
    Ffn,
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    Patch,
    ZeroAblate,
    NoiseAblate,
}

/// A mid-pass edit of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub kind: InterventionKind,
    pub layer: usize,
    pub sublayer: Sublayer,
    pub position: usize,
    pub payload: Option<Vec<f32>>,
    pub noise_seed: Option<u64>,
}

impl Intervention {
    pub fn patch(layer: usize, sublayer: Sublayer, position: usize, payload: Vec<f32>) -> Self {
        Self {
            kind: InterventionKind::Patch,
            layer,
            sublayer,
            position,
            payload: Some(payload),
            noise_seed: None,
        }
    }

    pub fn zero_ablate(layer: usize, sublayer: Sublayer) -> Self {
        Self {
            kind: InterventionKind::ZeroAblate,
            layer,
            sublayer,
            position: 0,
            payload: None,
            noise_seed: None,
        }
    }

    pub fn noise_ablate(layer: usize, sublayer: Sublayer, seed: u64) -> Self {
        Self {
            kind: InterventionKind::NoiseAblate,
            layer,
            sublayer,
            position: 0,
            payload: None,
            noise_seed: Some(seed),
        }
    }

    fn validate(&self, config: &ModelConfig, seq_len: usize) -> Result<()> {
        let fail = |m: String| Err(LabError::Intervention(m));
        if self.layer >= config.n_layers {
            return fail(format!(
                "layer {} out of range for a {}-layer model",
                self.layer, config.n_layers
            ));
        }
        match self.kind {
            InterventionKind::Patch => {
                if self.position >= seq_len {
                    return fail(format!(
                        "patch position {} beyond sequence length {seq_len}",
                        self.position
                    ));
                }
                match &self.payload {
                    None => return fail("patch without payload".into()),
                    Some(p) if p.len() != config.d_model => {
                        return fail(format!(
                            "payload length {} does not match d_model {}",
                            p.len(),
                            config.d_model
                        ))
                    }
                    Some(p) if p.iter().any(|v| !v.is_finite()) => {
                        return fail("payload contains non-finite values".into())
                    }
                    Some(_) => {}
                }
            }
            InterventionKind::ZeroAblate | InterventionKind::NoiseAblate => {
                if self.sublayer == Sublayer::Residual {
                    return fail("ablation targets a sublayer output, not the residual stream".into());
                }
                if self.kind == InterventionKind::NoiseAblate && self.noise_seed.is_none() {
                    return fail("noise ablation without a noise seed".into());
                }
            }
        }
        Ok(())
    }
}

/// What to record during a forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Capture {
    pub residual: bool,
    pub attention_out: bool,
    pub mlp_out: bool,
    pub attention_weights: bool,
}

impl Capture {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn streams() -> Self {
        Self {
            residual: true,
            attention_out: true,
            mlp_out: true,
            attention_weights: false,
        }
    }

    pub fn all() -> Self {
        Self {
            attention_weights: true,
            ..Self::streams()
        }
    }

    pub fn residual_only() -> Self {
        Self {
            residual: true,
            ..Self::default()
        }
    }
}

/// One captured vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub stimulus_id: String,
    pub layer: usize,
    pub stream: StreamKind,
    pub vector: Vec<f32>,
    pub extraction_index: usize,
}

/// Streams captured at the extraction position, indexed by capture layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CapturedStreams {
    /// `n_layers + 1` entries when captured, else empty.
    pub residual: Vec<Vec<f32>>,
    /// Entry `l - 1` holds `a(l)`.
    pub attention_out: Vec<Vec<f32>>,
    /// Entry `l - 1` holds `m(l)`.
    pub mlp_out: Vec<Vec<f32>>,
}

impl CapturedStreams {
    pub fn get(&self, stream: StreamKind, layer: usize) -> Option<&[f32]> {
        let v = match stream {
            StreamKind::Residual => self.residual.get(layer),
            StreamKind::Attention => layer.checked_sub(1).and_then(|l| self.attention_out.get(l)),
            StreamKind::Mlp => layer.checked_sub(1).and_then(|l| self.mlp_out.get(l)),
        };
        v.map(Vec::as_slice)
    }

    pub fn records(&self, stimulus_id: &str, extraction_index: usize) -> Vec<ActivationRecord> {
        let mut out = Vec::new();
        let mut push = |stream, layer, vector: &Vec<f32>| {
            out.push(ActivationRecord {
                stimulus_id: stimulus_id.to_string(),
                layer,
                stream,
                vector: vector.clone(),
                extraction_index,
            })
        };
        for (l, v) in self.residual.iter().enumerate() {
            push(StreamKind::Residual, l, v);
        }
        for (l, v) in self.attention_out.iter().enumerate() {
            push(StreamKind::Attention, l + 1, v);
        }
        for (l, v) in self.mlp_out.iter().enumerate() {
            push(StreamKind::Mlp, l + 1, v);
        }
        out
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub predicted_label_token: u32,
    /// Indexed by [`EmotionLabel::code`].
    pub label_logits: [f32; 8],
    pub streams: CapturedStreams,
    /// `[layer][head][position]`: attention from the extraction position to
    /// every position up to and including itself.
    pub attention: Option<Vec<Vec<Vec<f32>>>>,
}

/// Argmax over the eight label logits; ties go to the lower label code.
pub fn classify(result: &ForwardResult) -> EmotionLabel {
    argmax_label(&result.label_logits)
}

pub(crate) fn argmax_label(logits: &[f32; 8]) -> EmotionLabel {
    let mut best = 0;
    for c in 1..8 {
        if logits[c] > logits[best] {
            best = c;
        }
    }
    EmotionLabel::ALL[best]
}

/// Readout tokens for the eight labels, pairwise distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelReadout {
    tokens: [u32; 8],
}

impl Default for LabelReadout {
    fn default() -> Self {
        Self::from_strings(&DEFAULT_LABEL_STRINGS.map(String::from), &Tokenizer::new())
            .expect("default label strings are first-token distinct")
    }
}

impl LabelReadout {
    pub fn new(tokens: [u32; 8]) -> Result<Self> {
        for i in 0..8 {
            for j in 0..i {
                if tokens[i] == tokens[j] {
                    return Err(LabError::Validation(format!(
                        "labels {} and {} share readout token {}",
                        EmotionLabel::ALL[j],
                        EmotionLabel::ALL[i],
                        tokens[i]
                    )));
                }
            }
        }
        Ok(Self { tokens })
    }

    pub fn from_strings(labels: &[String; 8], tokenizer: &Tokenizer) -> Result<Self> {
        let mut tokens = [0u32; 8];
        for (i, s) in labels.iter().enumerate() {
            tokens[i] = tokenizer.first_token(s).ok_or_else(|| {
                LabError::Validation(format!("empty answer string for {}", EmotionLabel::ALL[i]))
            })?;
        }
        Self::new(tokens)
    }

    pub fn from_template(template: &PromptTemplate, tokenizer: &Tokenizer) -> Result<Self> {
        Self::from_strings(&template.label_strings(), tokenizer)
    }

    pub fn tokens(&self) -> [u32; 8] {
        self.tokens
    }
}

/// A loaded, immutable model.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    weights: Weights,
    readout: LabelReadout,
    fingerprint: String,
}

impl Model {
    pub fn new(config: ModelConfig, weights: Weights, readout: LabelReadout) -> Result<Self> {
        config.validate()?;
        weights.check_shapes(&config)?;
        if !weights.all_finite() {
            return Err(LabError::Model("weights contain non-finite values".into()));
        }
        for t in readout.tokens() {
            if t as usize >= config.vocab_size {
                return Err(LabError::Model(format!("readout token {t} outside vocabulary")));
            }
        }
        let fingerprint = weights.fingerprint(&config);
        Ok(Self {
            config,
            weights,
            readout,
            fingerprint,
        })
    }

    /// Build from a config, resolving its weight source.
    pub fn from_config(config: ModelConfig, readout: LabelReadout) -> Result<Self> {
        let weights = match &config.weight_source {
            WeightSource::SeededRandom => {
                config.validate()?;
                Weights::seeded_random(&config)
            }
            WeightSource::File { path } => {
                config.validate()?;
                Weights::from_tensor_file(&TensorFile::load(path)?, &config)?
            }
        };
        Self::new(config, weights, readout)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn readout(&self) -> LabelReadout {
        self.readout
    }

    /// Digest of architecture and parameters; identifies a model in manifests.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Run the model on `tokens`, reading predictions and captures at
    /// `extraction_index`.
    pub fn forward(
        &self,
        tokens: &[u32],
        extraction_index: usize,
        interventions: &[Intervention],
        capture: Capture,
    ) -> Result<ForwardResult> {
        let cfg = &self.config;
        let d = cfg.d_model;
        if tokens.is_empty() {
            return Err(LabError::Intervention("empty token sequence".into()));
        }
        if tokens.len() > cfg.max_seq {
            return Err(LabError::Intervention(format!(
                "prompt of {} tokens exceeds max_seq {}",
                tokens.len(),
                cfg.max_seq
            )));
        }
        if extraction_index >= tokens.len() {
            return Err(LabError::Intervention(format!(
                "extraction index {extraction_index} beyond sequence length {}",
                tokens.len()
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(LabError::Intervention(format!("token {t} outside vocabulary")));
        }
        for iv in interventions {
            iv.validate(cfg, tokens.len())?;
        }

        // Causal masking makes later positions irrelevant to the readout.
        let seq = extraction_index + 1;
        let mut x = vec![0.0f32; seq * d];
        for (t, &tok) in tokens[..seq].iter().enumerate() {
            let emb = &self.weights.token_embedding[tok as usize * d..(tok as usize + 1) * d];
            let pos = &self.weights.position_embedding[t * d..(t + 1) * d];
            for ((o, e), p) in x[t * d..(t + 1) * d].iter_mut().zip(emb).zip(pos) {
                *o = e + p;
            }
        }

        let mut streams = CapturedStreams::default();
        let mut attention = capture.attention_weights.then(Vec::new);
        let at = |buf: &[f32]| buf[extraction_index * d..seq * d].to_vec();

        for (layer, block) in self.weights.blocks.iter().enumerate() {
            let here = |sub: Sublayer| {
                interventions
                    .iter()
                    .filter(move |iv| iv.layer == layer && iv.sublayer == sub)
            };
            apply_interventions(&mut x, d, seq, here(Sublayer::Residual));
            if capture.residual {
                streams.residual.push(at(&x));
            }

            let mut attn_out = self.attention(block, &x, seq, extraction_index, attention.as_mut());
            apply_interventions(&mut attn_out, d, seq, here(Sublayer::Mhsa));
            if capture.attention_out {
                streams.attention_out.push(at(&attn_out));
            }
            add_assign(&mut x, &attn_out);

            let mut ffn_out = self.feed_forward(block, &x, seq);
            apply_interventions(&mut ffn_out, d, seq, here(Sublayer::Ffn));
            if capture.mlp_out {
                streams.mlp_out.push(at(&ffn_out));
            }
            add_assign(&mut x, &ffn_out);
        }
        if capture.residual {
            streams.residual.push(at(&x));
        }

        let last = &x[extraction_index * d..seq * d];
        let normed = layer_norm(last, &self.weights.final_gain, &self.weights.final_bias);
        let vocab = cfg.vocab_size;
        let mut label_logits = [0.0f32; 8];
        for (logit, &tok) in label_logits.iter_mut().zip(self.readout.tokens().iter()) {
            *logit = normed
                .iter()
                .enumerate()
                .map(|(i, v)| v * self.weights.unembedding[i * vocab + tok as usize])
                .sum();
        }
        if label_logits.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Model("non-finite label logits".into()));
        }
        let predicted = argmax_label(&label_logits);
        Ok(ForwardResult {
            predicted_label_token: self.readout.tokens()[predicted.code()],
            label_logits,
            streams,
            attention,
        })
    }

    fn attention(
        &self,
        block: &BlockWeights,
        x: &[f32],
        seq: usize,
        extraction_index: usize,
        rows: Option<&mut Vec<Vec<Vec<f32>>>>,
    ) -> Vec<f32> {
        let d = self.config.d_model;
        let n_heads = self.config.n_heads;
        let hd = self.config.head_dim();
        let normed = layer_norm_rows(x, d, &block.ln1_gain, &block.ln1_bias);
        let q = matmul(&normed, seq, d, &block.w_q, d, &block.b_q);
        let k = matmul(&normed, seq, d, &block.w_k, d, &block.b_k);
        let v = matmul(&normed, seq, d, &block.w_v, d, &block.b_v);
        let scale = 1.0 / (hd as f32).sqrt();

        let mut mixed = vec![0.0f32; seq * d];
        let mut captured = vec![Vec::new(); n_heads];
        let mut weights = vec![0.0f32; seq];
        for h in 0..n_heads {
            let off = h * hd;
            for t in 0..seq {
                let qt = &q[t * d + off..t * d + off + hd];
                let mut max = f32::NEG_INFINITY;
                for s in 0..=t {
                    let ks = &k[s * d + off..s * d + off + hd];
                    let score = dot(qt, ks) * scale;
                    weights[s] = score;
                    max = max.max(score);
                }
                let mut total = 0.0f32;
                for w in &mut weights[..=t] {
                    *w = (*w - max).exp();
                    total += *w;
                }
                for w in &mut weights[..=t] {
                    *w /= total;
                }
                let out = &mut mixed[t * d + off..t * d + off + hd];
                for s in 0..=t {
                    let vs = &v[s * d + off..s * d + off + hd];
                    for (o, val) in out.iter_mut().zip(vs) {
                        *o += weights[s] * val;
                    }
                }
                if t == extraction_index {
                    captured[h] = weights[..=t].to_vec();
                }
            }
        }
        if let Some(rows) = rows {
            rows.push(captured);
        }
        matmul(&mixed, seq, d, &block.w_o, d, &block.b_o)
    }

    fn feed_forward(&self, block: &BlockWeights, x: &[f32], seq: usize) -> Vec<f32> {
        let d = self.config.d_model;
        let normed = layer_norm_rows(x, d, &block.ln2_gain, &block.ln2_bias);
        let mut hidden = matmul(&normed, seq, d, &block.w_in, self.config.d_ff, &block.b_in);
        for v in &mut hidden {
            *v = gelu(*v);
        }
        matmul(&hidden, seq, self.config.d_ff, &block.w_out, d, &block.b_out)
    }
}

fn apply_interventions<'a>(
    buf: &mut [f32],
    d: usize,
    seq: usize,
    interventions: impl Iterator<Item = &'a Intervention>,
) {
    // Ablations first so a patch on the same sublayer survives.
    let mut patches = Vec::new();
    for iv in interventions {
        match iv.kind {
            InterventionKind::ZeroAblate => buf.fill(0.0),
            InterventionKind::NoiseAblate => {
                let n = buf.len() as f64;
                let mean = buf.iter().map(|&v| v as f64).sum::<f64>() / n;
                let var = buf.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt() as f32;
                let mut rng = ChaCha8Rng::seed_from_u64(iv.noise_seed.unwrap_or_default());
                match Normal::new(0.0f32, std) {
                    Ok(normal) if std > 0.0 => {
                        for v in buf.iter_mut() {
                            *v = normal.sample(&mut rng);
                        }
                    }
                    _ => buf.fill(0.0),
                }
            }
            InterventionKind::Patch => patches.push(iv),
        }
    }
    for iv in patches {
        if iv.position < seq {
            let payload = iv.payload.as_deref().expect("validated patch payload");
            buf[iv.position * d..(iv.position + 1) * d].copy_from_slice(payload);
        }
    }
}

fn add_assign(x: &mut [f32], y: &[f32]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent partial sums let the loop vectorize.
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// `x[rows, in] @ w[in, out] + bias`
fn matmul(x: &[f32], rows: usize, in_dim: usize, w: &[f32], out_dim: usize, bias: &[f32]) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * out_dim);
    for r in 0..rows {
        let mut row = bias.to_vec();
        for (i, &xv) in x[r * in_dim..(r + 1) * in_dim].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[i * out_dim..(i + 1) * out_dim]) {
                *o += xv * wv;
            }
        }
        out.extend_from_slice(&row);
    }
    out
}

fn layer_norm(x: &[f32], gain: &[f32], bias: &[f32]) -> Vec<f32> {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter()
        .zip(gain)
        .zip(bias)
        .map(|((v, g), b)| (v - mean) * inv * g + b)
        .collect()
}

fn layer_norm_rows(x: &[f32], d: usize, gain: &[f32], bias: &[f32]) -> Vec<f32> {
    x.chunks_exact(d)
        .flat_map(|row| layer_norm(row, gain, bias))
        .collect()
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(seed: u64) -> Model {
        let mut c = ModelConfig::tiny(seed);
        c.n_layers = 3;
        c.d_model = 32;
        c.d_ff = 64;
        c.max_seq = 128;
        Model::from_config(c, LabelReadout::default()).unwrap()
    }

    fn prompt() -> Vec<u32> {
        let (tokens, _) = Tokenizer::new().encode_prompt_with_offsets("Text: the cup\nAnswer:");
        tokens
    }

    #[test]
    fn capture_counts() {
        let m = small_model(1);
        let t = prompt();
        let r = m.forward(&t, t.len() - 1, &[], Capture::streams()).unwrap();
        let records = r.streams.records("s", t.len() - 1);
        let count = |s| records.iter().filter(|r| r.stream == s).count();
        assert_eq!(count(StreamKind::Residual), 4);
        assert_eq!(count(StreamKind::Attention), 3);
        assert_eq!(count(StreamKind::Mlp), 3);
        assert!(records.iter().all(|r| r.vector.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn tie_breaks_to_lower_code() {
        let mut r = ForwardResult {
            predicted_label_token: 0,
            label_logits: [0.0; 8],
            streams: CapturedStreams::default(),
            attention: None,
        };
        r.label_logits[EmotionLabel::Grief.code()] = 2.0;
        assert_eq!(classify(&r), EmotionLabel::Grief);
        r.label_logits[EmotionLabel::Terror.code()] = 2.0;
        assert_eq!(classify(&r), EmotionLabel::Terror);
        r.label_logits = [1.0; 8];
        assert_eq!(classify(&r), EmotionLabel::Ecstasy);
    }

    #[test]
    fn invalid_interventions_rejected() {
        let m = small_model(1);
        let t = prompt();
        let ext = t.len() - 1;
        let bad = [
            Intervention::zero_ablate(3, Sublayer::Mhsa),
            Intervention::patch(0, Sublayer::Residual, ext, vec![0.0; 5]),
            Intervention::patch(0, Sublayer::Residual, t.len(), vec![0.0; 32]),
            Intervention::zero_ablate(0, Sublayer::Residual),
            Intervention {
                noise_seed: None,
                ..Intervention::noise_ablate(0, Sublayer::Ffn, 1)
            },
        ];
        for iv in bad {
            assert!(matches!(
                m.forward(&t, ext, &[iv], Capture::none()),
                Err(LabError::Intervention(_))
            ));
        }
    }

    #[test]
    fn overlong_prompt_rejected() {
        let m = small_model(1);
        let t = vec![65u32; 200];
        assert!(m.forward(&t, 199, &[], Capture::none()).is_err());
    }

    #[test]
    fn duplicate_readout_tokens_rejected() {
        let labels = EmotionLabel::ALL.map(|e| e.name().to_string());
        assert!(LabelReadout::from_strings(&labels, &Tokenizer::new()).is_err());
    }

    #[test]
    fn non_finite_weights_rejected() {
        let c = ModelConfig::tiny(1);
        let mut w = Weights::seeded_random(&c);
        w.final_gain[0] = f32::NAN;
        assert!(Model::new(c, w, LabelReadout::default()).is_err());
    }

    #[test]
    fn attention_rows_are_distributions() {
        let m = small_model(2);
        let t = prompt();
        let ext = t.len() - 1;
        let r = m.forward(&t, ext, &[], Capture::all()).unwrap();
        let att = r.attention.unwrap();
        assert_eq!(att.len(), 3);
        for layer in att {
            assert_eq!(layer.len(), 4);
            for row in layer {
                assert_eq!(row.len(), ext + 1);
                assert!(row.iter().all(|&w| w >= 0.0));
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn noise_ablation_depends_on_seed() {
        let m = small_model(4);
        let t = prompt();
        let ext = t.len() - 1;
        let run = |seed| {
            m.forward(&t, ext, &[Intervention::noise_ablate(1, Sublayer::Mhsa, seed)], Capture::none())
                .unwrap()
                .label_logits
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }
}
