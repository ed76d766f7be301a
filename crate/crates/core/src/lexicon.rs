// SPDX-License-Identifier: MIT OR Apache-2.0

//! Keyword sentiment baseline.
//!
//! Text is split on whitespace, each word is lowercased and stripped of
//! leading and trailing punctuation, and words are matched exactly against
//! the lexicon: no stemming, no negation handling. A text is *invisible* to
//! the baseline when it has no emotion-keyword hits and at most one valence
//! word.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::stimulus::{Corpus, SetTag};

/// Emotion keyword lists plus positive/negative valence dictionaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub emotion_keywords: BTreeMap<String, BTreeSet<String>>,
    pub positive: BTreeSet<String>,
    pub negative: BTreeSet<String>,
}

impl Lexicon {
    pub fn new(
        emotion_keywords: BTreeMap<String, BTreeSet<String>>,
        positive: BTreeSet<String>,
        negative: BTreeSet<String>,
    ) -> Result<Self> {
        let lexicon = Self {
            emotion_keywords,
            positive,
            negative,
        };
        lexicon.validate()?;
        Ok(lexicon)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let lexicon: Self =
            serde_json::from_str(&content).map_err(|e| LabError::parse(path.display().to_string(), e))?;
        lexicon.validate()?;
        Ok(lexicon)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .emotion_keywords
            .values()
            .flatten()
            .chain(&self.positive)
            .chain(&self.negative);
        for term in all {
            if term.is_empty() || term.chars().any(char::is_whitespace) || term.to_lowercase() != *term {
                return Err(LabError::Validation(format!(
                    "lexicon term {term:?} must be lowercase and whitespace-free"
                )));
            }
        }
        if let Some(term) = self.positive.intersection(&self.negative).next() {
            return Err(LabError::Validation(format!(
                "term {term:?} is listed as both positive and negative"
            )));
        }
        Ok(())
    }

    pub fn is_emotion_keyword(&self, word: &str) -> bool {
        self.emotion_keywords.values().any(|set| set.contains(word))
    }

    /// The same lexicon with positive and negative dictionaries exchanged.
    pub fn swapped_valence(&self) -> Self {
        Self {
            emotion_keywords: self.emotion_keywords.clone(),
            positive: self.negative.clone(),
            negative: self.positive.clone(),
        }
    }
}

/// Lowercase and strip surrounding punctuation.
pub fn normalize_word(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Normalized words with the byte span each occupies in `text`.
pub fn words(text: &str) -> Vec<(Range<usize>, String)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                let raw = &text[s..i];
                let lead = raw.len() - raw.trim_start_matches(|c: char| !c.is_alphanumeric()).len();
                let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
                if !trimmed.is_empty() {
                    let begin = s + lead;
                    out.push((begin..begin + trimmed.len(), trimmed.to_lowercase()));
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Keyword analysis of one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconReport {
    pub emotion_hits: BTreeMap<String, usize>,
    pub pos_count: usize,
    pub neg_count: usize,
    /// `(pos - neg) / (pos + neg)`; `None` when there are no valence words.
    pub polarity: Option<f64>,
    pub invisible: bool,
}

impl LexiconReport {
    pub fn total_emotion_hits(&self) -> usize {
        self.emotion_hits.values().sum()
    }
}

pub fn analyze(text: &str, lexicon: &Lexicon) -> LexiconReport {
    let mut emotion_hits: BTreeMap<String, usize> =
        lexicon.emotion_keywords.keys().map(|k| (k.clone(), 0)).collect();
    let (mut pos, mut neg) = (0, 0);
    for (_, word) in words(text) {
        for (category, terms) in &lexicon.emotion_keywords {
            if terms.contains(&word) {
                *emotion_hits.get_mut(category).expect("category present") += 1;
            }
        }
        if lexicon.positive.contains(&word) {
            pos += 1;
        }
        if lexicon.negative.contains(&word) {
            neg += 1;
        }
    }
    let valence = pos + neg;
    let polarity = (valence > 0).then(|| (pos as f64 - neg as f64) / valence as f64);
    let total: usize = emotion_hits.values().sum();
    LexiconReport {
        emotion_hits,
        pos_count: pos,
        neg_count: neg,
        polarity,
        invisible: total == 0 && valence <= 1,
    }
}

/// Invisible / total counts for one stimulus set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SetSummary {
    pub invisible: usize,
    pub total: usize,
}

impl SetSummary {
    pub fn fraction_invisible(&self) -> Option<f64> {
        (self.total > 0).then(|| self.invisible as f64 / self.total as f64)
    }
}

/// Per-stimulus reports plus per-set summaries.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusAudit {
    pub rows: Vec<(String, SetTag, LexiconReport)>,
    pub by_set: BTreeMap<SetTag, SetSummary>,
}

impl CorpusAudit {
    pub fn overall(&self) -> SetSummary {
        self.by_set.values().fold(SetSummary::default(), |acc, s| SetSummary {
            invisible: acc.invisible + s.invisible,
            total: acc.total + s.total,
        })
    }
}

pub fn audit_corpus<'a>(stimuli: impl IntoIterator<Item = &'a crate::stimulus::Stimulus>, lexicon: &Lexicon) -> CorpusAudit {
    let mut audit = CorpusAudit::default();
    for s in stimuli {
        let report = analyze(&s.text, lexicon);
        let summary = audit.by_set.entry(s.set_tag).or_default();
        summary.total += 1;
        summary.invisible += usize::from(report.invisible);
        audit.rows.push((s.id.clone(), s.set_tag, report));
    }
    audit
}

/// Convenience wrapper over a whole corpus.
pub fn audit(corpus: &Corpus, lexicon: &Lexicon) -> CorpusAudit {
    audit_corpus(corpus.stimuli(), lexicon)
}

/// Mask of tokens whose own normalized text is an emotion keyword.
///
/// Subword pieces never match: `["devast", "ated"]` is all false.
pub fn keyword_token_mask<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Vec<bool> {
    tokens
        .iter()
        .map(|t| lexicon.is_emotion_keyword(&normalize_word(t.as_ref())))
        .collect()
}

/// Byte spans of emotion keywords in `text`.
pub fn keyword_spans(text: &str, lexicon: &Lexicon) -> Vec<Range<usize>> {
    words(text)
        .into_iter()
        .filter(|(_, w)| lexicon.is_emotion_keyword(w))
        .map(|(span, _)| span)
        .collect()
}

/// Mark every token whose byte span overlaps a whole-word keyword span.
/// `offsets` comes from the tokenizer; special tokens carry `None`.
pub fn keyword_span_mask(text: &str, offsets: &[Option<Range<usize>>], lexicon: &Lexicon) -> Vec<bool> {
    let spans = keyword_spans(text, lexicon);
    offsets
        .iter()
        .map(|o| {
            o.as_ref()
                .is_some_and(|r| spans.iter().any(|s| r.start < s.end && s.start < r.end))
        })
        .collect()
}
