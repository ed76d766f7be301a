// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures().join(name)
}

/// Run the binary with `args` and return its output.
pub fn affectscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affectscope"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stimuli(name: &str) -> Vec<serde_json::Value> {
    fs::read_to_string(fixture(name))
        .expect("fixture readable")
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).expect("json line"))
        .filter(|v| v.get("id").is_some())
        .collect()
}

fn write_jsonl(path: &Path, rows: &[serde_json::Value]) {
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    fs::write(path, text).expect("write corpus");
}

/// The first `n` stimuli of each emotion (or of each domain, for neutral
/// sets), optionally restricted to `domains`.
fn subset(name: &str, key: &str, n: usize, domains: Option<&[&str]>) -> Vec<serde_json::Value> {
    let mut taken: BTreeMap<String, usize> = BTreeMap::new();
    stimuli(name)
        .into_iter()
        .filter(|s| domains.is_none_or(|d| d.contains(&s["topic_domain"].as_str().unwrap_or(""))))
        .filter(|s| {
            let count = taken.entry(s[key].to_string()).or_default();
            *count += 1;
            *count <= n
        })
        .collect()
}

/// Write a reduced corpus and a config for a two-layer model into `dir`
/// and return the config path. `edit` can rewrite the TOML before it is
/// saved.
pub fn small_experiment(dir: &Path, edit: impl FnOnce(String) -> String) -> PathBuf {
    let data = dir.join("data");
    fs::create_dir_all(&data).unwrap();
    write_jsonl(&data.join("set_a.jsonl"), &subset("set_a.jsonl", "emotion", 2, None));
    // One clinic and one family vignette per emotion.
    let mut b = subset("set_b.jsonl", "emotion", 1, Some(&["clinic"]));
    b.extend(subset("set_b.jsonl", "emotion", 1, Some(&["family"])));
    write_jsonl(&data.join("set_b.jsonl"), &b);
    write_jsonl(
        &data.join("set_b_neutral.jsonl"),
        &subset("set_b_neutral.jsonl", "topic_domain", 4, Some(&["clinic", "family"])),
    );
    write_jsonl(&data.join("set_c.jsonl"), &subset("set_c.jsonl", "topic_domain", 1, None));
    fs::copy(fixture("template.json"), data.join("template.json")).unwrap();
    fs::copy(fixture("lexicon.json"), data.join("lexicon.json")).unwrap();
    let toml = r#"
[model]
n_layers = 2
d_model = 32
n_heads = 2
d_ff = 64
seed = 3

[data]
template = "data/template.json"
lexicon = "data/lexicon.json"
set_a = "data/set_a.jsonl"
set_b = "data/set_b.jsonl"
set_b_neutral = "data/set_b_neutral.jsonl"
set_c = "data/set_c.jsonl"

[output]
dir = "run"

[probe]
seed = 1
folds = 2
max_iters = 300
bootstrap_resamples = 50

[patch]
seed = 2
n_pairs = 3

[knockout]
seed = 3

[geometry]
seed = 4
n_permutations = 19

[power]
seed = 5
gaps = [0.0, 0.1]
n_sims = 4
n_permutations = 19
"#;
    let path = dir.join("experiment.toml");
    fs::write(&path, edit(toml.to_string())).unwrap();
    path
}

/// Every file under `root` keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
