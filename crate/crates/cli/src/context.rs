// SPDX-License-Identifier: MIT OR Apache-2.0

//! Shared state of one subcommand invocation: the config, the run
//! directory, and lazily loaded inputs.

use std::fs;
use std::path::{Path, PathBuf};

use affectscope::lexicon::Lexicon;
use affectscope::runtime::{ActivationStore, LabelReadout, Model, Tokenizer};
use affectscope::stimulus::{load_corpus, Corpus, PromptTemplate};
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::error::CliError;

/// The four stimulus sets of an experiment, in canonical order.
pub const SETS: [&str; 4] = ["set_a", "set_b", "set_b_neutral", "set_c"];

pub struct Context {
    pub cfg: LoadedConfig,
    pub out: PathBuf,
}

pub struct Corpora {
    pub a: Corpus,
    pub b: Corpus,
    pub b_neutral: Corpus,
    pub c: Corpus,
}

impl Corpora {
    pub fn get(&self, name: &str) -> &Corpus {
        match name {
            "set_a" => &self.a,
            "set_b" => &self.b,
            "set_b_neutral" => &self.b_neutral,
            "set_c" => &self.c,
            _ => unreachable!("unknown set {name}"),
        }
    }
}

impl Context {
    pub fn new(cfg: LoadedConfig, out_override: Option<PathBuf>) -> Result<Self, CliError> {
        let out = match out_override {
            Some(p) => p,
            None => cfg
                .config
                .output
                .dir
                .as_ref()
                .map(|d| cfg.resolve(d))
                .ok_or_else(|| CliError::Config("no output directory: set output.dir or pass --out".into()))?,
        };
        Ok(Self { cfg, out })
    }

    pub fn template(&self) -> Result<PromptTemplate, CliError> {
        let t = PromptTemplate::load(self.cfg.resolve(&self.cfg.config.data.template))?;
        Ok(if self.cfg.config.data.zero_shot { t.zero_shot() } else { t })
    }

    pub fn lexicon(&self) -> Result<Lexicon, CliError> {
        Ok(Lexicon::load(self.cfg.resolve(&self.cfg.config.data.lexicon))?)
    }

    pub fn corpora(&self) -> Result<Corpora, CliError> {
        let d = &self.cfg.config.data;
        let load = |p: &Path| load_corpus(self.cfg.resolve(p));
        Ok(Corpora {
            a: load(&d.set_a)?,
            b: load(&d.set_b)?,
            b_neutral: load(&d.set_b_neutral)?,
            c: load(&d.set_c)?,
        })
    }

    pub fn model(&self, template: &PromptTemplate) -> Result<Model, CliError> {
        let readout = LabelReadout::from_template(template, &Tokenizer::new())?;
        Ok(Model::from_config(self.cfg.model_config(), readout)?)
    }

    pub fn store_dir(&self, set: &str) -> PathBuf {
        self.out.join("stores").join(set)
    }

    /// Open the store of `set`, which must be complete for `corpus` and
    /// built by `model`.
    pub fn store(&self, set: &str, corpus: &Corpus, model: &Model) -> Result<ActivationStore, CliError> {
        let dir = self.store_dir(set);
        if !dir.join("manifest.json").is_file() {
            return Err(CliError::Runtime(format!(
                "no activation store for {set} at {}; run `affectscope extract` first",
                dir.display()
            )));
        }
        let store = ActivationStore::open(&dir)?;
        if store.manifest().model_fingerprint != model.fingerprint() {
            return Err(CliError::Runtime(format!(
                "activation store for {set} was built with a different model; rerun `affectscope extract`"
            )));
        }
        store.check_complete(corpus).map_err(|e| {
            CliError::Runtime(format!("activation store for {set} is incomplete ({e}); rerun `affectscope extract`"))
        })?;
        Ok(store)
    }

    /// Create (if needed) and return the output subdirectory `name`.
    pub fn section(&self, name: &str) -> Result<PathBuf, CliError> {
        let dir = self.out.join(name);
        fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }
}

/// Write rows as CSV with a header from the row type's field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// One named scalar for the report.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Metric {
    pub metric: String,
    pub value: f64,
}

pub fn metric(name: impl Into<String>, value: f64) -> Metric {
    Metric {
        metric: name.into(),
        value,
    }
}

/// Join fields into a `;`-separated list cell.
pub fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

/// Write a header and string records as CSV.
pub fn write_records(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
