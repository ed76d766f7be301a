// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run every stimulus set through the model and persist activation stores.

use std::collections::BTreeMap;

use affectscope::runtime::{extract_corpus, ActivationStore, CaptureFlags, ExtractOptions};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::context::{write_json, Context, SETS};
use crate::error::CliError;

#[derive(Serialize)]
struct RunManifest<'a> {
    tool_version: &'static str,
    model_fingerprint: &'a str,
    corpus_hashes: BTreeMap<&'a str, String>,
    store_hashes: BTreeMap<&'a str, String>,
    config: &'a ExperimentConfig,
}

pub fn run(ctx: &Context, max_new: Option<usize>) -> Result<String, CliError> {
    let template = ctx.template()?;
    let corpora = ctx.corpora()?;
    let model = ctx.model(&template)?;
    let mut budget = max_new;
    let mut computed = 0;
    let mut complete = true;
    let mut corpus_hashes = BTreeMap::new();
    let mut store_hashes = BTreeMap::new();
    for set in SETS {
        let corpus = corpora.get(set);
        corpus_hashes.insert(set, corpus.content_hash());
        let options = ExtractOptions { max_new: budget };
        let summary = extract_corpus(&model, corpus, &template, CaptureFlags::all(), ctx.store_dir(set), options)?;
        computed += summary.computed;
        if let Some(b) = budget.as_mut() {
            *b -= summary.computed;
        }
        if summary.total < corpus.len() {
            complete = false;
            continue;
        }
        store_hashes.insert(set, ActivationStore::open(ctx.store_dir(set))?.content_hash()?);
    }
    if !complete {
        return Ok(format!("extracted {computed} stimuli; stopped early, rerun to resume"));
    }
    write_json(
        &ctx.out.join("run.json"),
        &RunManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            model_fingerprint: model.fingerprint(),
            corpus_hashes,
            store_hashes,
            config: &ctx.cfg.config,
        },
    )?;
    Ok(format!("extracted {computed} stimuli; all stores complete"))
}
