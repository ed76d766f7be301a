// SPDX-License-Identifier: MIT OR Apache-2.0

//! Byte-level tokenizer: one token per UTF-8 byte plus two specials.

use std::ops::Range;

/// Token id of the begin-of-text marker.
pub const BOS: u32 = 256;
/// Token id of the padding marker.
pub const PAD: u32 = 257;
/// Smallest vocabulary that covers every byte and both specials.
pub const BYTE_VOCAB: usize = 258;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tokenizer;

impl Tokenizer {
    pub fn new() -> Self {
        Self
    }

    pub fn vocab_size(&self) -> usize {
        BYTE_VOCAB
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    /// Encode a prompt with a leading begin-of-text token, returning the
    /// byte span each token covers (`None` for specials).
    pub fn encode_prompt_with_offsets(&self, text: &str) -> (Vec<u32>, Vec<Option<Range<usize>>>) {
        let mut tokens = Vec::with_capacity(text.len() + 1);
        let mut offsets = Vec::with_capacity(text.len() + 1);
        tokens.push(BOS);
        offsets.push(None);
        for (i, b) in text.bytes().enumerate() {
            tokens.push(u32::from(b));
            offsets.push(Some(i..i + 1));
        }
        (tokens, offsets)
    }

    /// Inverse of [`Tokenizer::encode`]; specials are dropped.
    pub fn decode(&self, tokens: &[u32]) -> String {
        let bytes: Vec<u8> = tokens
            .iter()
            .filter_map(|&t| u8::try_from(t).ok())
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    /// Text of a single token. Bytes that are not standalone UTF-8 decode
    /// to the replacement character.
    pub fn decode_token(&self, token: u32) -> String {
        match token {
            BOS => "<|begin_of_text|>".to_string(),
            PAD => "<|pad|>".to_string(),
            t => match u8::try_from(t) {
                Ok(b) => String::from_utf8_lossy(&[b]).into_owned(),
                Err(_) => "<|unk|>".to_string(),
            },
        }
    }

    /// First token of `text`, used as the readout token for answer strings.
    pub fn first_token(&self, text: &str) -> Option<u32> {
        text.bytes().next().map(u32::from)
    }
}
