// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hand-wired models with known circuits.
//!
//! A [`ToyCircuit`] places attention heads that, at the query byte (`:` by
//! default), attend to designated cue bytes and write fixed label
//! contributions into the residual stream. The unembedding reads those
//! label directions, so the location of every class signal is known
//! exactly. These models are the ground truth for checking that patching,
//! knockout and attention analyses find what was planted.
//!
//! Features are encoded as antisymmetric pairs of dimensions `(f, f + d/2)`
//! so every hand-set embedding has zero mean and layer norm only rescales.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::model::{LabelReadout, Model};
use super::tokenizer::{BOS, BYTE_VOCAB};
use super::weights::{ModelConfig, WeightSource, Weights};
use crate::error::{LabError, Result};
use crate::stimulus::{Corpus, EmotionLabel, SetTag, Stimulus};

/// A head that copies cue identity into label directions.
#[derive(Debug, Clone, PartialEq)]
pub struct CueReader {
    pub layer: usize,
    pub head: usize,
    /// Cue byte and the label contributions it writes when attended.
    pub cues: Vec<(u8, Vec<(EmotionLabel, f32)>)>,
}

impl CueReader {
    /// One cue byte per label, each writing weight 1 to its own label.
    pub fn one_hot(layer: usize, head: usize, cue_bytes: [u8; 8]) -> Self {
        Self {
            layer,
            head,
            cues: cue_bytes
                .iter()
                .zip(EmotionLabel::ALL)
                .map(|(&b, e)| (b, vec![(e, 1.0)]))
                .collect(),
        }
    }
}

/// Specification of a toy model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCircuit {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub query_byte: u8,
    pub readers: Vec<CueReader>,
    /// Turn every head that is not a reader into an attention sink on the
    /// begin-of-text token with zero value output.
    pub sink_heads: bool,
    /// Standard deviation of random weights in every parameter not owned by
    /// a reader or sink head (other heads and all feed-forward blocks).
    pub noise_std: f32,
    pub seed: u64,
    /// Target pre-softmax score of a reader on its cue.
    pub attention_sharpness: f32,
    pub readout: LabelReadout,
}

impl ToyCircuit {
    pub fn new(n_layers: usize, readers: Vec<CueReader>) -> Self {
        Self {
            n_layers,
            d_model: 64,
            n_heads: 2,
            d_ff: 64,
            max_seq: 512,
            query_byte: b':',
            readers,
            sink_heads: false,
            noise_std: 0.0,
            seed: 0,
            attention_sharpness: 40.0,
            readout: LabelReadout::default(),
        }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size: BYTE_VOCAB,
            max_seq: self.max_seq,
            seed: self.seed,
            weight_source: WeightSource::SeededRandom,
        }
    }

    pub fn build(&self) -> Result<Model> {
        let config = self.config();
        config.validate()?;
        let d = self.d_model;
        let half = d / 2;
        if !d.is_multiple_of(2) {
            return Err(LabError::Model("toy circuits need an even d_model".into()));
        }
        let hd = config.head_dim();

        // Feature allocation.
        let mut next = 0usize;
        let mut alloc = || {
            let f = next;
            next += 1;
            f
        };
        let query_f = alloc();
        let sink_q = self.sink_heads.then(&mut alloc);
        let sink_k = self.sink_heads.then(&mut alloc);
        let label_f: Vec<usize> = (0..8).map(|_| alloc()).collect();
        let mut key_f = Vec::new();
        let mut cue_f: BTreeMap<u8, usize> = BTreeMap::new();
        let mut owner: BTreeMap<u8, usize> = BTreeMap::new();
        for (r, reader) in self.readers.iter().enumerate() {
            if reader.layer >= self.n_layers || reader.head >= self.n_heads {
                return Err(LabError::Model(format!("reader {r} outside the model")));
            }
            if reader.cues.len() > hd {
                return Err(LabError::Model(format!(
                    "reader {r} has {} cues but heads are {hd} wide",
                    reader.cues.len()
                )));
            }
            key_f.push(alloc());
            for (b, _) in &reader.cues {
                if *b == self.query_byte || owner.insert(*b, r).is_some() {
                    return Err(LabError::Model(format!("cue byte {b} is used twice")));
                }
                cue_f.insert(*b, alloc());
            }
        }
        if next > half {
            return Err(LabError::Model(format!(
                "circuit needs {next} features but d_model {d} holds {half}"
            )));
        }
        let mut owned = vec![vec![false; self.n_heads]; self.n_layers];
        for reader in &self.readers {
            if owned[reader.layer][reader.head] {
                return Err(LabError::Model("two readers share a head".into()));
            }
            owned[reader.layer][reader.head] = true;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut w = Weights::zeros(&config);
        let set_feature = |row: &mut [f32], f: usize, value: f32| {
            row[f] += value;
            row[f + half] -= value;
        };

        // Embeddings.
        let emb = |tok: usize| tok * d..(tok + 1) * d;
        let r = emb(self.query_byte as usize);
        set_feature(&mut w.token_embedding[r], query_f, 1.0);
        for (reader, kf) in self.readers.iter().zip(&key_f) {
            for (b, _) in &reader.cues {
                let r = emb(*b as usize);
                set_feature(&mut w.token_embedding[r.clone()], *kf, 1.0);
                set_feature(&mut w.token_embedding[r], cue_f[b], 1.0);
            }
        }
        if let (Some(sq), Some(sk)) = (sink_q, sink_k) {
            let r = emb(BOS as usize);
            set_feature(&mut w.token_embedding[r], sk, 1.0);
            for t in 0..self.max_seq {
                set_feature(&mut w.position_embedding[t * d..(t + 1) * d], sq, 1.0);
            }
        }

        // Layer-norm output magnitude of a unit feature among `k` active ones.
        let normed = |k: usize| (d as f32 / (2.0 * k as f32)).sqrt();
        let extra = usize::from(self.sink_heads);
        let q_mag = normed(1 + extra);
        let k_mag = normed(2 + extra);
        let qk_scale =
            (self.attention_sharpness * (hd as f32).sqrt() / (q_mag * k_mag)).sqrt();
        let sink_scale =
            (self.attention_sharpness * (hd as f32).sqrt() / (normed(1 + extra) * normed(2))).sqrt();

        let noise = Normal::new(0.0f32, self.noise_std.max(0.0)).expect("valid std");
        let mut draw = |buf: &mut [f32]| {
            if self.noise_std > 0.0 {
                for v in buf {
                    *v = noise.sample(&mut rng);
                }
            }
        };

        for (layer, block) in w.blocks.iter_mut().enumerate() {
            for head in 0..self.n_heads {
                let cols = head * hd..(head + 1) * hd;
                let reader = self
                    .readers
                    .iter()
                    .zip(&key_f)
                    .find(|(r, _)| r.layer == layer && r.head == head);
                if let Some((reader, kf)) = reader {
                    let q_col = cols.start;
                    block.w_q[query_f * d + q_col] = qk_scale;
                    block.w_k[kf * d + q_col] = qk_scale;
                    for (slot, (b, writes)) in reader.cues.iter().enumerate() {
                        let v_col = cols.start + slot;
                        block.w_v[cue_f[b] * d + v_col] = 1.0;
                        let row = &mut block.w_o[v_col * d..(v_col + 1) * d];
                        for (label, weight) in writes {
                            set_feature(row, label_f[label.code()], *weight);
                        }
                    }
                } else if let (true, Some(sq), Some(sk)) = (self.sink_heads, sink_q, sink_k) {
                    block.w_q[sq * d + cols.start] = sink_scale;
                    block.w_k[sk * d + cols.start] = sink_scale;
                } else {
                    for i in 0..d {
                        draw(&mut block.w_q[i * d + cols.start..i * d + cols.end]);
                        draw(&mut block.w_k[i * d + cols.start..i * d + cols.end]);
                        draw(&mut block.w_v[i * d + cols.start..i * d + cols.end]);
                    }
                    for c in cols.clone() {
                        draw(&mut block.w_o[c * d..(c + 1) * d]);
                    }
                }
            }
            draw(&mut block.w_in);
            draw(&mut block.w_out);
        }

        let vocab = config.vocab_size;
        for (c, tok) in self.readout.tokens().iter().enumerate() {
            w.unembedding[label_f[c] * vocab + *tok as usize] = 1.0;
            w.unembedding[(label_f[c] + half) * vocab + *tok as usize] = -1.0;
        }
        Model::new(config, w, self.readout)
    }
}

/// A corpus of `per_label` stimuli per emotion whose texts embed the cue
/// string `cue(emotion)` between filler words built from `z` and `o`, so
/// cue bytes must avoid those letters and the template's own bytes.
pub fn cue_corpus(
    id_prefix: &str,
    set_tag: SetTag,
    per_label: usize,
    cue: impl Fn(EmotionLabel) -> String,
) -> Result<Corpus> {
    let mut stimuli = Vec::with_capacity(8 * per_label);
    for e in EmotionLabel::ALL {
        for i in 0..per_label {
            let filler = "zo".repeat(1 + i % 3);
            stimuli.push(Stimulus {
                id: format!("{id_prefix}{}_{i}", e.code()),
                text: format!("{filler} {} oz{}", cue(e), "o".repeat(i % 2)),
                emotion: Some(e),
                topic_domain: format!("d{}", i % 3),
                set_tag,
            });
        }
    }
    Corpus::new(stimuli, None)
}

/// Cue of the digit reader built by [`CueReader::one_hot`] with `b"12345678"`.
pub fn digit_cue(e: EmotionLabel) -> String {
    ((b'1' + e.code() as u8) as char).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{classify, Capture, Tokenizer};

    #[test]
    fn reader_classifies_by_cue() {
        let model = ToyCircuit::new(3, vec![CueReader::one_hot(1, 0, *b"12345678")])
            .build()
            .unwrap();
        let tok = Tokenizer::new();
        for (i, e) in EmotionLabel::ALL.iter().enumerate() {
            let text = format!("Text: zz {} zz\nAnswer:", i + 1);
            let (tokens, _) = tok.encode_prompt_with_offsets(&text);
            let r = model.forward(&tokens, tokens.len() - 1, &[], Capture::none()).unwrap();
            assert_eq!(classify(&r), *e);
        }
    }

    #[test]
    fn rejects_overfull_circuits() {
        let readers = (0..4)
            .map(|l| CueReader::one_hot(l, 0, std::array::from_fn(|i| b'a' + (l * 8 + i) as u8)))
            .collect();
        assert!(ToyCircuit::new(4, readers).build().is_err());
        let clash = vec![
            CueReader::one_hot(0, 0, *b"12345678"),
            CueReader::one_hot(1, 0, *b"1bcdefgh"),
        ];
        assert!(ToyCircuit::new(2, clash).build().is_err());
    }
}
