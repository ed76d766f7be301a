// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model configuration and parameter storage.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::tensorfile::{Tensor, TensorFile};

/// Where a model's parameters come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightSource {
    SeededRandom,
    File { path: PathBuf },
}

/// Architecture hyperparameters of a pre-norm decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub seed: u64,
    #[serde(default = "default_source")]
    pub weight_source: WeightSource,
}

fn default_source() -> WeightSource {
    WeightSource::SeededRandom
}

impl ModelConfig {
    /// Four layers, 64-wide residual stream: the desk-scale default.
    pub fn tiny(seed: u64) -> Self {
        Self {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size: super::tokenizer::BYTE_VOCAB,
            max_seq: 1024,
            seed,
            weight_source: WeightSource::SeededRandom,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(LabError::Model(m));
        if self.n_layers < 1 {
            return fail("n_layers must be at least 1".into());
        }
        if self.d_model < 8 {
            return fail(format!("d_model {} is below the minimum of 8", self.d_model));
        }
        if self.n_heads < 1 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "n_heads {} must divide d_model {}",
                self.n_heads, self.d_model
            ));
        }
        if self.d_ff < 1 {
            return fail("d_ff must be positive".into());
        }
        if self.vocab_size < super::tokenizer::BYTE_VOCAB {
            return fail(format!(
                "vocab_size {} cannot hold the byte vocabulary",
                self.vocab_size
            ));
        }
        if self.max_seq < 2 {
            return fail("max_seq must be at least 2".into());
        }
        Ok(())
    }

    fn architecture_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n_layers": self.n_layers,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "vocab_size": self.vocab_size,
            "max_seq": self.max_seq,
        })
    }
}

/// Parameters of one decoder block. Matrices are row-major `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1_gain: Vec<f32>,
    pub ln1_bias: Vec<f32>,
    pub w_q: Vec<f32>,
    pub b_q: Vec<f32>,
    pub w_k: Vec<f32>,
    pub b_k: Vec<f32>,
    pub w_v: Vec<f32>,
    pub b_v: Vec<f32>,
    pub w_o: Vec<f32>,
    pub b_o: Vec<f32>,
    pub ln2_gain: Vec<f32>,
    pub ln2_bias: Vec<f32>,
    pub w_in: Vec<f32>,
    pub b_in: Vec<f32>,
    pub w_out: Vec<f32>,
    pub b_out: Vec<f32>,
}

impl BlockWeights {
    fn zeros(d: usize, d_ff: usize) -> Self {
        Self {
            ln1_gain: vec![1.0; d],
            ln1_bias: vec![0.0; d],
            w_q: vec![0.0; d * d],
            b_q: vec![0.0; d],
            w_k: vec![0.0; d * d],
            b_k: vec![0.0; d],
            w_v: vec![0.0; d * d],
            b_v: vec![0.0; d],
            w_o: vec![0.0; d * d],
            b_o: vec![0.0; d],
            ln2_gain: vec![1.0; d],
            ln2_bias: vec![0.0; d],
            w_in: vec![0.0; d * d_ff],
            b_in: vec![0.0; d_ff],
            w_out: vec![0.0; d_ff * d],
            b_out: vec![0.0; d],
        }
    }

    /// Zero every attention parameter so the sublayer outputs exactly zero.
    pub fn zero_attention(&mut self) {
        for v in [
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.b_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
            &mut self.b_o,
        ] {
            v.fill(0.0);
        }
    }

    /// Zero every feed-forward parameter so the sublayer outputs exactly zero.
    pub fn zero_ffn(&mut self) {
        for v in [
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_out,
            &mut self.b_out,
        ] {
            v.fill(0.0);
        }
    }

    fn named(&self) -> [(&'static str, &Vec<f32>); 16] {
        [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("w_q", &self.w_q),
            ("b_q", &self.b_q),
            ("w_k", &self.w_k),
            ("b_k", &self.b_k),
            ("w_v", &self.w_v),
            ("b_v", &self.b_v),
            ("w_o", &self.w_o),
            ("b_o", &self.b_o),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
            ("w_in", &self.w_in),
            ("b_in", &self.b_in),
            ("w_out", &self.w_out),
            ("b_out", &self.b_out),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, &mut Vec<f32>); 16] {
        [
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("w_q", &mut self.w_q),
            ("b_q", &mut self.b_q),
            ("w_k", &mut self.w_k),
            ("b_k", &mut self.b_k),
            ("w_v", &mut self.w_v),
            ("b_v", &mut self.b_v),
            ("w_o", &mut self.w_o),
            ("b_o", &mut self.b_o),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
            ("w_in", &mut self.w_in),
            ("b_in", &mut self.b_in),
            ("w_out", &mut self.w_out),
            ("b_out", &mut self.b_out),
        ]
    }

    fn shapes(d: usize, d_ff: usize) -> [(&'static str, Vec<usize>); 16] {
        [
            ("ln1_gain", vec![d]),
            ("ln1_bias", vec![d]),
            ("w_q", vec![d, d]),
            ("b_q", vec![d]),
            ("w_k", vec![d, d]),
            ("b_k", vec![d]),
            ("w_v", vec![d, d]),
            ("b_v", vec![d]),
            ("w_o", vec![d, d]),
            ("b_o", vec![d]),
            ("ln2_gain", vec![d]),
            ("ln2_bias", vec![d]),
            ("w_in", vec![d, d_ff]),
            ("b_in", vec![d_ff]),
            ("w_out", vec![d_ff, d]),
            ("b_out", vec![d]),
        ]
    }
}

/// Every parameter of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `[vocab, d_model]`
    pub token_embedding: Vec<f32>,
    /// `[max_seq, d_model]`
    pub position_embedding: Vec<f32>,
    pub blocks: Vec<BlockWeights>,
    pub final_gain: Vec<f32>,
    pub final_bias: Vec<f32>,
    /// `[d_model, vocab]`
    pub unembedding: Vec<f32>,
}

impl Weights {
    /// All-zero matrices with unit layer-norm gains.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        Self {
            token_embedding: vec![0.0; config.vocab_size * d],
            position_embedding: vec![0.0; config.max_seq * d],
            blocks: (0..config.n_layers)
                .map(|_| BlockWeights::zeros(d, config.d_ff))
                .collect(),
            final_gain: vec![1.0; d],
            final_bias: vec![0.0; d],
            unembedding: vec![0.0; d * config.vocab_size],
        }
    }

    /// Gaussian initialization from `config.seed`; matrices are scaled by
    /// the inverse square root of their fan-in.
    pub fn seeded_random(config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let mut fill = |buf: &mut Vec<f32>, std: f32| {
            let normal = Normal::new(0.0f32, std).expect("positive std");
            for v in buf.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        };
        let mut w = Self::zeros(config);
        fill(&mut w.token_embedding, 1.0);
        fill(&mut w.position_embedding, 0.3);
        let inv_d = 1.0 / (d as f32).sqrt();
        let inv_ff = 1.0 / (config.d_ff as f32).sqrt();
        for block in &mut w.blocks {
            fill(&mut block.w_q, inv_d);
            fill(&mut block.w_k, inv_d);
            fill(&mut block.w_v, inv_d);
            fill(&mut block.w_o, inv_d);
            fill(&mut block.w_in, inv_d);
            fill(&mut block.w_out, inv_ff);
        }
        fill(&mut w.unembedding, inv_d);
        w
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let d = config.d_model;
        let bad = |what: &str| Err(LabError::Model(format!("{what} has the wrong size")));
        if self.token_embedding.len() != config.vocab_size * d {
            return bad("token_embedding");
        }
        if self.position_embedding.len() != config.max_seq * d {
            return bad("position_embedding");
        }
        if self.blocks.len() != config.n_layers {
            return bad("block list");
        }
        for (i, block) in self.blocks.iter().enumerate() {
            for ((name, buf), (_, shape)) in block.named().iter().zip(BlockWeights::shapes(d, config.d_ff)) {
                if buf.len() != shape.iter().product::<usize>() {
                    return bad(&format!("block {i} {name}"));
                }
            }
        }
        if self.final_gain.len() != d || self.final_bias.len() != d {
            return bad("final norm");
        }
        if self.unembedding.len() != d * config.vocab_size {
            return bad("unembedding");
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        let mut all = self
            .token_embedding
            .iter()
            .chain(&self.position_embedding)
            .chain(&self.final_gain)
            .chain(&self.final_bias)
            .chain(&self.unembedding);
        all.all(|v| v.is_finite())
            && self
                .blocks
                .iter()
                .all(|b| b.named().iter().all(|(_, buf)| buf.iter().all(|v| v.is_finite())))
    }

    pub fn to_tensor_file(&self, config: &ModelConfig) -> TensorFile {
        let d = config.d_model;
        let mut file = TensorFile {
            metadata: serde_json::json!({ "config": config.architecture_json() }),
            ..Default::default()
        };
        let mut put = |name: String, shape: Vec<usize>, data: &[f32]| {
            file.insert(name, Tensor::new(shape, data.to_vec()).expect("shape matches"));
        };
        put("token_embedding".into(), vec![config.vocab_size, d], &self.token_embedding);
        put("position_embedding".into(), vec![config.max_seq, d], &self.position_embedding);
        for (i, block) in self.blocks.iter().enumerate() {
            for ((name, buf), (_, shape)) in block.named().iter().zip(BlockWeights::shapes(d, config.d_ff)) {
                put(format!("blocks.{i}.{name}"), shape, buf);
            }
        }
        put("final_gain".into(), vec![d], &self.final_gain);
        put("final_bias".into(), vec![d], &self.final_bias);
        put("unembedding".into(), vec![d, config.vocab_size], &self.unembedding);
        file
    }

    pub fn from_tensor_file(file: &TensorFile, config: &ModelConfig) -> Result<Self> {
        let mut w = Self::zeros(config);
        let take = |name: &str, dst: &mut Vec<f32>| -> Result<()> {
            let t = file.get(name)?;
            if t.data.len() != dst.len() {
                return Err(LabError::Model(format!(
                    "tensor {name} has {} values, config expects {}",
                    t.data.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(&t.data);
            Ok(())
        };
        take("token_embedding", &mut w.token_embedding)?;
        take("position_embedding", &mut w.position_embedding)?;
        for (i, block) in w.blocks.iter_mut().enumerate() {
            for (name, buf) in block.named_mut() {
                take(&format!("blocks.{i}.{name}"), buf)?;
            }
        }
        take("final_gain", &mut w.final_gain)?;
        take("final_bias", &mut w.final_bias)?;
        take("unembedding", &mut w.unembedding)?;
        Ok(w)
    }

    pub fn save(&self, config: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor_file(config).save(path)
    }

    /// Content digest over the architecture and every parameter byte.
    pub fn fingerprint(&self, config: &ModelConfig) -> String {
        crate::hash::sha256_hex(&self.to_tensor_file(config).to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::tiny(1);
        assert!(c.validate().is_ok());
        c.n_heads = 5;
        assert!(c.validate().is_err());
        c = ModelConfig::tiny(1);
        c.d_model = 4;
        c.n_heads = 1;
        assert!(c.validate().is_err());
        c = ModelConfig::tiny(1);
        c.n_layers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn tensor_file_roundtrip_preserves_weights() {
        let mut c = ModelConfig::tiny(3);
        c.n_layers = 2;
        c.max_seq = 16;
        let w = Weights::seeded_random(&c);
        let back = Weights::from_tensor_file(&TensorFile::from_bytes(&w.to_tensor_file(&c).to_bytes()).unwrap(), &c).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.fingerprint(&c), w.fingerprint(&c));
    }

    #[test]
    fn seeds_change_weights() {
        let c = ModelConfig::tiny(3);
        let mut c2 = c.clone();
        c2.seed = 4;
        assert_ne!(Weights::seeded_random(&c), Weights::seeded_random(&c2));
        assert_eq!(Weights::seeded_random(&c), Weights::seeded_random(&c));
    }

    #[test]
    fn mismatched_file_rejected() {
        let mut c = ModelConfig::tiny(3);
        c.max_seq = 16;
        let file = Weights::seeded_random(&c).to_tensor_file(&c);
        let mut other = c.clone();
        other.d_model = 32;
        assert!(Weights::from_tensor_file(&file, &other).is_err());
    }
}
