// SPDX-License-Identifier: MIT OR Apache-2.0

//! Lexicon audit and factorial design check of every stimulus set.

use affectscope::lexicon::audit_corpus;
use affectscope::stimulus::factorial_audit;
use serde::Serialize;

use crate::context::{join, metric, write_csv, Context, SETS};
use crate::error::CliError;

#[derive(Serialize)]
struct StimulusRow<'a> {
    set: &'a str,
    id: &'a str,
    set_tag: &'a str,
    emotion: Option<&'a str>,
    word_count: usize,
    emotion_hits: usize,
    hit_detail: String,
    pos_count: usize,
    neg_count: usize,
    polarity: Option<f64>,
    invisible: bool,
}

#[derive(Serialize)]
struct SetRow<'a> {
    set: &'a str,
    total: usize,
    invisible: usize,
    fraction_invisible: f64,
}

#[derive(Serialize)]
struct CellRow<'a> {
    set: &'a str,
    emotion: &'a str,
    domain: String,
    count: usize,
    expected: usize,
    flagged: bool,
}

#[derive(Serialize)]
struct DesignRow<'a> {
    set: &'a str,
    design_declared: bool,
    cells: usize,
    flagged: usize,
    missing: usize,
    stray: usize,
    summary: String,
}

pub fn run(ctx: &Context, strict: bool) -> Result<String, CliError> {
    let lexicon = ctx.lexicon()?;
    let corpora = ctx.corpora()?;
    let dir = ctx.section("audit")?;
    let mut stimuli = Vec::new();
    let mut sets = Vec::new();
    let mut cells = Vec::new();
    let mut designs = Vec::new();
    let mut metrics = Vec::new();
    let mut visible_b = Vec::new();
    for set in SETS {
        let corpus = corpora.get(set);
        let audit = audit_corpus(corpus.stimuli(), &lexicon);
        for (s, (_, _, report)) in corpus.stimuli().iter().zip(&audit.rows) {
            let detail: Vec<String> = report.emotion_hits.iter().map(|(k, v)| format!("{k}:{v}")).collect();
            stimuli.push(StimulusRow {
                set,
                id: &s.id,
                set_tag: s.set_tag.as_str(),
                emotion: s.emotion.map(|e| e.name()),
                word_count: s.word_count(),
                emotion_hits: report.total_emotion_hits(),
                hit_detail: join(&detail),
                pos_count: report.pos_count,
                neg_count: report.neg_count,
                polarity: report.polarity,
                invisible: report.invisible,
            });
            if set == "set_b" && !report.invisible {
                visible_b.push(s.id.clone());
            }
        }
        let overall = audit.overall();
        let fraction = overall.fraction_invisible().unwrap_or(f64::NAN);
        sets.push(SetRow {
            set,
            total: overall.total,
            invisible: overall.invisible,
            fraction_invisible: fraction,
        });
        metrics.push(metric(format!("audit.{set}.fraction_invisible"), fraction));
        let f = factorial_audit(corpus);
        for c in &f.cells {
            cells.push(CellRow {
                set,
                emotion: c.emotion.name(),
                domain: c.domain.clone(),
                count: c.count,
                expected: c.expected,
                flagged: c.is_flagged(),
            });
        }
        designs.push(DesignRow {
            set,
            design_declared: f.design_declared,
            cells: f.cells.len(),
            flagged: f.flagged().count(),
            missing: f.missing().count(),
            stray: f.stray,
            summary: f.summary(),
        });
    }
    write_csv(&dir.join("stimuli.csv"), &stimuli)?;
    write_csv(&dir.join("sets.csv"), &sets)?;
    write_csv(&dir.join("factorial_cells.csv"), &cells)?;
    write_csv(&dir.join("factorial.csv"), &designs)?;
    write_csv(&dir.join("metrics.csv"), &metrics)?;
    if strict && !visible_b.is_empty() {
        return Err(CliError::Validation(format!(
            "{} set_b stimuli are visible to the lexicon: {}",
            visible_b.len(),
            visible_b.join(", ")
        )));
    }
    Ok(format!(
        "audited {} stimuli; set_b invisible fraction {}",
        stimuli.len(),
        sets[1].fraction_invisible
    ))
}
