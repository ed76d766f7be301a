// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stimulus corpora: data model, validation, file I/O and prompt rendering.
//!
//! A corpus file is UTF-8 with one JSON object per line:
//!
//! ```text
//! {"id":"b-grief-01","text":"...","emotion":"grief","topic_domain":"work","set_tag":"B"}
//! ```
//!
//! An optional first line of the form `{"design":{"domains":[...],"per_cell":4}}`
//! declares a factorial layout; every (emotion, domain) cell must then hold
//! exactly `per_cell` stimuli.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::runtime::Tokenizer;

/// Peak intensities of the eight Plutchik primaries.
///
/// The discriminant is the stable integer code used in every serialized
/// artifact and as the tie-break order for classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Ecstasy = 0,
    Admiration = 1,
    Terror = 2,
    Amazement = 3,
    Grief = 4,
    Loathing = 5,
    Rage = 6,
    Vigilance = 7,
}

impl EmotionLabel {
    pub const COUNT: usize = 8;

    pub const ALL: [EmotionLabel; 8] = [
        EmotionLabel::Ecstasy,
        EmotionLabel::Admiration,
        EmotionLabel::Terror,
        EmotionLabel::Amazement,
        EmotionLabel::Grief,
        EmotionLabel::Loathing,
        EmotionLabel::Rage,
        EmotionLabel::Vigilance,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Ecstasy => "ecstasy",
            EmotionLabel::Admiration => "admiration",
            EmotionLabel::Terror => "terror",
            EmotionLabel::Amazement => "amazement",
            EmotionLabel::Grief => "grief",
            EmotionLabel::Loathing => "loathing",
            EmotionLabel::Rage => "rage",
            EmotionLabel::Vigilance => "vigilance",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| LabError::parse("emotion label", format!("unknown emotion {s:?}")))
    }
}

/// Which stimulus set a stimulus belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SetTag {
    A,
    B,
    #[serde(rename = "B_neutral")]
    BNeutral,
    C,
}

impl SetTag {
    /// Whether stimuli of this set carry an emotion label.
    pub fn is_emotional(self) -> bool {
        matches!(self, SetTag::A | SetTag::B)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SetTag::A => "A",
            SetTag::B => "B",
            SetTag::BNeutral => "B_neutral",
            SetTag::C => "C",
        }
    }
}

impl fmt::Display for SetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled text item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub id: String,
    pub text: String,
    pub emotion: Option<EmotionLabel>,
    pub topic_domain: String,
    pub set_tag: SetTag,
}

impl Stimulus {
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }

    pub fn is_neutral(&self) -> bool {
        self.emotion.is_none()
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(LabError::Validation("stimulus with empty id".into()));
        }
        if self.word_count() == 0 {
            return Err(LabError::Validation(format!(
                "stimulus {} has empty text",
                self.id
            )));
        }
        match (self.set_tag.is_emotional(), self.emotion) {
            (true, None) => Err(LabError::Validation(format!(
                "stimulus {} in set {} lacks an emotion",
                self.id, self.set_tag
            ))),
            (false, Some(e)) => Err(LabError::Validation(format!(
                "neutral stimulus {} in set {} carries emotion {e}",
                self.id, self.set_tag
            ))),
            _ => Ok(()),
        }
    }
}

/// Declared factorial layout: every listed emotion crossed with every
/// domain, `per_cell` stimuli each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorialDesign {
    #[serde(default = "all_emotions")]
    pub emotions: Vec<EmotionLabel>,
    pub domains: Vec<String>,
    pub per_cell: usize,
}

fn all_emotions() -> Vec<EmotionLabel> {
    EmotionLabel::ALL.to_vec()
}

#[derive(Deserialize, Serialize)]
struct DesignLine {
    design: FactorialDesign,
}

/// A validated collection of stimuli.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    stimuli: Vec<Stimulus>,
    design: Option<FactorialDesign>,
}

impl Corpus {
    /// Build a corpus, checking every invariant.
    pub fn new(stimuli: Vec<Stimulus>, design: Option<FactorialDesign>) -> Result<Self> {
        let corpus = Self { stimuli, design };
        corpus.validate()?;
        Ok(corpus)
    }

    fn validate(&self) -> Result<()> {
        if self.stimuli.is_empty() {
            return Err(LabError::Validation("corpus contains no stimuli".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.stimuli {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(LabError::Validation(format!("duplicate stimulus id {}", s.id)));
            }
        }
        if self.design.is_some() {
            let audit = factorial_audit(self);
            if let Some(cell) = audit.flagged().next() {
                return Err(LabError::Validation(format!(
                    "factorial cell ({}, {}) holds {} stimuli, expected {}",
                    cell.emotion, cell.domain, cell.count, cell.expected
                )));
            }
            if audit.stray > 0 {
                return Err(LabError::Validation(format!(
                    "{} stimuli fall outside the declared factorial design",
                    audit.stray
                )));
            }
        }
        Ok(())
    }

    pub fn stimuli(&self) -> &[Stimulus] {
        &self.stimuli
    }

    pub fn design(&self) -> Option<&FactorialDesign> {
        self.design.as_ref()
    }

    pub fn len(&self) -> usize {
        self.stimuli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimuli.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Stimulus> {
        self.stimuli.iter().find(|s| s.id == id)
    }

    /// Serialize to the line-delimited corpus format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(design) = &self.design {
            let line = DesignLine {
                design: design.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("design serializes"));
            out.push('\n');
        }
        for s in &self.stimuli {
            out.push_str(&serde_json::to_string(s).expect("stimulus serializes"));
            out.push('\n');
        }
        out
    }

    /// Parse the line-delimited corpus format.
    pub fn from_jsonl(content: &str, context: &str) -> Result<Self> {
        let mut stimuli = Vec::new();
        let mut design = None;
        for (lineno, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| LabError::parse(format!("{context}:{}", lineno + 1), e))?;
            if value.get("design").is_some() {
                if !stimuli.is_empty() || design.is_some() {
                    return Err(LabError::parse(
                        format!("{context}:{}", lineno + 1),
                        "design line must come first",
                    ));
                }
                let parsed: DesignLine = serde_json::from_value(value)
                    .map_err(|e| LabError::parse(format!("{context}:{}", lineno + 1), e))?;
                design = Some(parsed.design);
                continue;
            }
            let stimulus: Stimulus = serde_json::from_value(value)
                .map_err(|e| LabError::parse(format!("{context}:{}", lineno + 1), e))?;
            stimuli.push(stimulus);
        }
        Self::new(stimuli, design)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| LabError::io(path, e))
    }

    /// Stable digest of the corpus content (ids, texts, labels, order).
    pub fn content_hash(&self) -> String {
        crate::hash::sha256_hex(self.to_jsonl().as_bytes())
    }
}

/// Load and validate a corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    Corpus::from_jsonl(&content, &path.display().to_string())
}

/// Per-cell count in a factorial audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CellCount {
    pub emotion: EmotionLabel,
    pub domain: String,
    pub count: usize,
    pub expected: usize,
}

impl CellCount {
    pub fn is_flagged(&self) -> bool {
        self.count != self.expected
    }
}

/// Result of checking a corpus against its declared design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FactorialAudit {
    /// False when the corpus declares no design; `cells` is then empty.
    pub design_declared: bool,
    pub cells: Vec<CellCount>,
    /// Emotional stimuli whose (emotion, domain) is not a declared cell.
    pub stray: usize,
}

impl FactorialAudit {
    pub fn flagged(&self) -> impl Iterator<Item = &CellCount> {
        self.cells.iter().filter(|c| c.is_flagged())
    }

    /// Cells with no stimuli at all.
    pub fn missing(&self) -> impl Iterator<Item = &CellCount> {
        self.cells.iter().filter(|c| c.count == 0)
    }

    pub fn summary(&self) -> String {
        if !self.design_declared {
            return "no design declared".to_string();
        }
        let flagged = self.flagged().count();
        format!(
            "{} cells, {} flagged, {} missing, {} stray",
            self.cells.len(),
            flagged,
            self.missing().count(),
            self.stray
        )
    }
}

/// Count stimuli per (emotion, domain) cell of the declared design.
pub fn factorial_audit(corpus: &Corpus) -> FactorialAudit {
    let Some(design) = corpus.design() else {
        return FactorialAudit {
            design_declared: false,
            cells: Vec::new(),
            stray: 0,
        };
    };
    let mut counts: BTreeMap<(EmotionLabel, &str), usize> = BTreeMap::new();
    for e in &design.emotions {
        for d in &design.domains {
            counts.insert((*e, d.as_str()), 0);
        }
    }
    let mut stray = 0;
    for s in corpus.stimuli() {
        let Some(e) = s.emotion else { continue };
        match counts.get_mut(&(e, s.topic_domain.as_str())) {
            Some(c) => *c += 1,
            None => stray += 1,
        }
    }
    let cells = counts
        .into_iter()
        .map(|((emotion, domain), count)| CellCount {
            emotion,
            domain: domain.to_string(),
            count,
            expected: design.per_cell,
        })
        .collect();
    FactorialAudit {
        design_declared: true,
        cells,
        stray,
    }
}

/// One demonstration in a few-shot prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub text: String,
    pub label: String,
}

fn default_marker() -> String {
    "Answer:".to_string()
}

fn default_item_prefix() -> String {
    "Text: ".to_string()
}

/// Few-shot classification prompt layout.
///
/// Rendering produces
///
/// ```text
/// {preamble}\n\n
/// {item_prefix}{example text}\n{answer_marker} {example label}\n\n   (per example)
/// {item_prefix}{target text}\n{answer_marker}
/// ```
///
/// so the target slot always follows the demonstrations and the prompt
/// ends on the marker's colon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(default)]
    pub preamble: String,
    #[serde(default)]
    pub few_shot: Vec<FewShotExample>,
    #[serde(default = "default_marker")]
    pub answer_marker: String,
    #[serde(default = "default_item_prefix")]
    pub item_prefix: String,
    /// Answer strings per emotion; the first token of each is the readout
    /// token. Unlisted emotions use [`DEFAULT_LABEL_STRINGS`].
    ///
    /// [`DEFAULT_LABEL_STRINGS`]: crate::runtime::DEFAULT_LABEL_STRINGS
    #[serde(default)]
    pub labels: BTreeMap<EmotionLabel, String>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            preamble: String::new(),
            few_shot: Vec::new(),
            answer_marker: default_marker(),
            item_prefix: default_item_prefix(),
            labels: BTreeMap::new(),
        }
    }
}

/// A rendered prompt and where to read the prediction from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub tokens: Vec<u32>,
    pub extraction_index: usize,
}

impl PromptTemplate {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let template: Self = serde_json::from_str(&content)
            .map_err(|e| LabError::parse(path.display().to_string(), e))?;
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.answer_marker.contains(':') {
            return Err(LabError::MarkerNotFound(self.answer_marker.clone()));
        }
        Ok(())
    }

    /// The same template with its demonstrations removed.
    pub fn zero_shot(&self) -> Self {
        Self {
            few_shot: Vec::new(),
            ..self.clone()
        }
    }

    /// Answer string for an emotion.
    pub fn label_string(&self, emotion: EmotionLabel) -> String {
        self.labels
            .get(&emotion)
            .cloned()
            .unwrap_or_else(|| crate::runtime::DEFAULT_LABEL_STRINGS[emotion.code()].to_string())
    }

    /// All eight answer strings in label-code order.
    pub fn label_strings(&self) -> [String; 8] {
        EmotionLabel::ALL.map(|e| self.label_string(e))
    }

    pub fn render_text(&self, target: &str) -> String {
        let mut text = String::new();
        if !self.preamble.is_empty() {
            text.push_str(&self.preamble);
            text.push_str("\n\n");
        }
        for ex in &self.few_shot {
            text.push_str(&self.item_prefix);
            text.push_str(&ex.text);
            text.push('\n');
            text.push_str(&self.answer_marker);
            text.push(' ');
            text.push_str(&ex.label);
            text.push_str("\n\n");
        }
        text.push_str(&self.item_prefix);
        text.push_str(target);
        text.push('\n');
        text.push_str(&self.answer_marker);
        text
    }
}

/// Render the classification prompt for `target` and locate the token of
/// the colon terminating the final answer marker.
pub fn render_prompt(
    template: &PromptTemplate,
    target: &Stimulus,
    tokenizer: &Tokenizer,
) -> Result<RenderedPrompt> {
    if target.word_count() == 0 {
        return Err(LabError::Validation(format!(
            "stimulus {} has empty text",
            target.id
        )));
    }
    template.validate()?;
    let text = template.render_text(&target.text);
    let marker_at = text
        .rfind(&template.answer_marker)
        .ok_or_else(|| LabError::MarkerNotFound(template.answer_marker.clone()))?;
    let colon_in_marker = template
        .answer_marker
        .rfind(':')
        .ok_or_else(|| LabError::MarkerNotFound(template.answer_marker.clone()))?;
    let colon_byte = marker_at + colon_in_marker;
    let (tokens, offsets) = tokenizer.encode_prompt_with_offsets(&text);
    let extraction_index = offsets
        .iter()
        .rposition(|span| span.as_ref().is_some_and(|r| r.contains(&colon_byte)))
        .ok_or_else(|| LabError::MarkerNotFound(template.answer_marker.clone()))?;
    Ok(RenderedPrompt {
        text,
        tokens,
        extraction_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stim(id: &str, emotion: Option<EmotionLabel>, domain: &str, tag: SetTag) -> Stimulus {
        Stimulus {
            id: id.into(),
            text: format!("text for {id}"),
            emotion,
            topic_domain: domain.into(),
            set_tag: tag,
        }
    }

    fn full_design(per_cell: usize) -> (Vec<Stimulus>, FactorialDesign) {
        let domains = vec!["work".to_string(), "family".into(), "health".into()];
        let mut out = Vec::new();
        for e in EmotionLabel::ALL {
            for d in &domains {
                for k in 0..per_cell {
                    out.push(stim(&format!("{e}-{d}-{k}"), Some(e), d, SetTag::B));
                }
            }
        }
        (
            out,
            FactorialDesign {
                emotions: EmotionLabel::ALL.to_vec(),
                domains,
                per_cell,
            },
        )
    }

    #[test]
    fn label_codes_are_stable() {
        for (i, e) in EmotionLabel::ALL.iter().enumerate() {
            assert_eq!(e.code(), i);
            assert_eq!(EmotionLabel::from_code(i), Some(*e));
            assert_eq!(e.name().parse::<EmotionLabel>().unwrap(), *e);
        }
        assert_eq!(EmotionLabel::from_code(8), None);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(Corpus::new(vec![], None), Err(LabError::Validation(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = stim("x", Some(EmotionLabel::Grief), "d", SetTag::A);
        let err = Corpus::new(vec![a.clone(), a], None).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn neutral_with_emotion_rejected() {
        let s = stim("n", Some(EmotionLabel::Rage), "d", SetTag::BNeutral);
        assert!(Corpus::new(vec![s], None).is_err());
        let s = stim("e", None, "d", SetTag::B);
        assert!(Corpus::new(vec![s], None).is_err());
    }

    #[test]
    fn complete_design_audits_clean() {
        let (stimuli, design) = full_design(4);
        let corpus = Corpus::new(stimuli, Some(design)).unwrap();
        assert_eq!(corpus.len(), 96);
        let audit = factorial_audit(&corpus);
        assert_eq!(audit.cells.len(), 24);
        assert!(audit.cells.iter().all(|c| c.count == 4));
        assert_eq!(audit.flagged().count(), 0);
        assert_eq!(audit.missing().count(), 0);
    }

    #[test]
    fn removed_vignette_is_flagged() {
        let (mut stimuli, design) = full_design(4);
        stimuli.remove(5);
        // Construction enforces the design, so audit the raw layout.
        assert!(Corpus::new(stimuli.clone(), Some(design.clone())).is_err());
        let corpus = Corpus {
            stimuli,
            design: Some(design),
        };
        let audit = factorial_audit(&corpus);
        let flagged: Vec<_> = audit.flagged().collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].count, 3);
    }

    #[test]
    fn no_design_reported() {
        let corpus = Corpus::new(vec![stim("a", Some(EmotionLabel::Rage), "d", SetTag::A)], None).unwrap();
        let audit = factorial_audit(&corpus);
        assert!(!audit.design_declared);
        assert_eq!(audit.summary(), "no design declared");
    }

    #[test]
    fn jsonl_roundtrip_with_design() {
        let (stimuli, design) = full_design(1);
        let corpus = Corpus::new(stimuli, Some(design)).unwrap();
        let back = Corpus::from_jsonl(&corpus.to_jsonl(), "mem").unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn malformed_line_is_parse_error() {
        let err = Corpus::from_jsonl("{\"id\": 3}\n", "mem").unwrap_err();
        assert!(matches!(err, LabError::Parse { .. }));
    }

    #[test]
    fn neutral_serializes_with_null_emotion() {
        let s = stim("n1", None, "work", SetTag::BNeutral);
        let line = serde_json::to_string(&s).unwrap();
        assert!(line.contains("\"emotion\":null"));
        assert!(line.contains("\"set_tag\":\"B_neutral\""));
    }

    fn template(shots: usize) -> PromptTemplate {
        PromptTemplate {
            preamble: "Classify the emotion.".into(),
            few_shot: (0..shots)
                .map(|i| FewShotExample {
                    text: format!("I was furious {i}"),
                    label: "rage".into(),
                })
                .collect(),
            ..PromptTemplate::default()
        }
    }

    #[test]
    fn few_shot_prompt_ends_on_marker_colon() {
        let tok = Tokenizer::new();
        let target = stim("t", Some(EmotionLabel::Grief), "d", SetTag::B);
        let r = render_prompt(&template(2), &target, &tok).unwrap();
        assert!(r.text.ends_with("Answer:"));
        assert_eq!(r.text.matches("Answer:").count(), 3);
        assert_eq!(r.extraction_index, r.tokens.len() - 1);
        assert_eq!(tok.decode_token(r.tokens[r.extraction_index]), ":");
    }

    #[test]
    fn zero_shot_prompt_uses_same_rule() {
        let tok = Tokenizer::new();
        let target = stim("t", Some(EmotionLabel::Grief), "d", SetTag::B);
        let r = render_prompt(&template(2).zero_shot(), &target, &tok).unwrap();
        assert_eq!(r.text.matches("Answer:").count(), 1);
        assert_eq!(r.extraction_index, r.tokens.len() - 1);
    }

    #[test]
    fn colons_in_target_do_not_move_extraction() {
        let tok = Tokenizer::new();
        let mut target = stim("t", Some(EmotionLabel::Grief), "d", SetTag::B);
        target.text = "Note: 9:30 meeting: cancelled. Answer: none".into();
        let r = render_prompt(&template(1), &target, &tok).unwrap();
        assert_eq!(r.extraction_index, r.tokens.len() - 1);
        assert_eq!(tok.decode_token(r.tokens[r.extraction_index]), ":");
    }

    #[test]
    fn marker_without_colon_is_rejected() {
        let tok = Tokenizer::new();
        let mut t = template(0);
        t.answer_marker = "Answer".into();
        let target = stim("t", Some(EmotionLabel::Grief), "d", SetTag::B);
        assert!(matches!(
            render_prompt(&t, &target, &tok),
            Err(LabError::MarkerNotFound(_))
        ));
    }

    #[test]
    fn label_strings_fall_back_to_defaults() {
        let mut t = template(0);
        assert_eq!(t.label_string(EmotionLabel::Rage), "rage");
        assert_eq!(t.label_strings()[3], "Amazement");
        t.labels.insert(EmotionLabel::Amazement, "wonder".into());
        assert_eq!(t.label_strings()[3], "wonder");
    }
}
