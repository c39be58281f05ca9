//! Positive-pair construction.
//!
//! A turn *survives* when it passes the length filter (or the filter is off).
//! Consecutive pairs are only drawn between turns adjacent in the original
//! dialogue, so a dropped turn splits the dialogue into independent runs unless
//! `bridge_filtered` is set. Pairs are emitted in one orientation; the loss is
//! symmetric.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{passes_length_filter, Dialogue, SEP_TOKEN};
use crate::error::{DseError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairSource {
    Consec1To1,
    Consec2To1,
    Consec3To1,
    SelfPair,
    File,
}

impl PairSource {
    fn for_width(k: usize) -> Self {
        match k {
            1 => PairSource::Consec1To1,
            2 => PairSource::Consec2To1,
            3 => PairSource::Consec3To1,
            _ => unreachable!("widths are validated to 1..=3"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPair {
    pub query: String,
    pub response: String,
    pub source: PairSource,
    /// Index of the dialogue the pair came from, when it came from a corpus.
    pub origin: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBuildConfig {
    pub query_widths: BTreeSet<usize>,
    pub apply_length_filter: bool,
    pub bridge_filtered: bool,
}

impl Default for PairBuildConfig {
    fn default() -> Self {
        PairBuildConfig {
            query_widths: BTreeSet::from([1]),
            apply_length_filter: true,
            bridge_filtered: false,
        }
    }
}

impl PairBuildConfig {
    pub fn with_widths(widths: &[usize]) -> Self {
        PairBuildConfig {
            query_widths: widths.iter().copied().collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.query_widths.is_empty() {
            return Err(DseError::config("query_widths", "must not be empty"));
        }
        if let Some(&k) = self.query_widths.iter().find(|&&k| !(1..=3).contains(&k)) {
            return Err(DseError::config(
                "query_widths",
                format!("width {k} not in {{1,2,3}}"),
            ));
        }
        Ok(())
    }
}

/// Pair construction strategies exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairStrategy {
    Consec,
    K2,
    K3,
    Combined,
    SelfPairs,
    File,
}

impl FromStr for PairStrategy {
    type Err = DseError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "consec" => PairStrategy::Consec,
            "k2" => PairStrategy::K2,
            "k3" => PairStrategy::K3,
            "combined" => PairStrategy::Combined,
            "self" => PairStrategy::SelfPairs,
            "file" => PairStrategy::File,
            other => {
                return Err(DseError::config(
                    "strategy",
                    format!("unknown strategy {other:?} (consec|k2|k3|combined|self|file)"),
                ))
            }
        })
    }
}

impl PairStrategy {
    pub fn name(self) -> &'static str {
        match self {
            PairStrategy::Consec => "consec",
            PairStrategy::K2 => "k2",
            PairStrategy::K3 => "k3",
            PairStrategy::Combined => "combined",
            PairStrategy::SelfPairs => "self",
            PairStrategy::File => "file",
        }
    }
}

/// Runs of surviving, adjacent turn texts (trimmed).
fn surviving_runs<'a>(dialogue: &'a Dialogue, cfg: &PairBuildConfig) -> Vec<Vec<&'a str>> {
    let mut runs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for turn in &dialogue.turns {
        let text = turn.text.trim();
        if !cfg.apply_length_filter || passes_length_filter(text) {
            current.push(text);
        } else if !cfg.bridge_filtered && !current.is_empty() {
            runs.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }
    runs
}

fn join_query(parts: &[&str]) -> String {
    parts.join(&format!(" {SEP_TOKEN} "))
}

fn width_pairs(dialogues: &[Dialogue], k: usize, cfg: &PairBuildConfig) -> Vec<TrainPair> {
    let mut out = Vec::new();
    for (d, dialogue) in dialogues.iter().enumerate() {
        for run in surviving_runs(dialogue, cfg) {
            for w in run.windows(k + 1) {
                out.push(TrainPair {
                    query: join_query(&w[..k]),
                    response: w[k].to_string(),
                    source: PairSource::for_width(k),
                    origin: Some(d),
                });
            }
        }
    }
    out
}

/// Width-1 consecutive pairs `(u_t, u_{t+1})`.
pub fn build_consecutive(dialogues: &[Dialogue], cfg: &PairBuildConfig) -> Vec<TrainPair> {
    width_pairs(dialogues, 1, cfg)
}

/// `k` consecutive utterances joined by `" [SEP] "` as query, the next one as
/// response.
pub fn build_k_to_1(dialogues: &[Dialogue], k: usize, cfg: &PairBuildConfig) -> Result<Vec<TrainPair>> {
    if !(2..=3).contains(&k) {
        return Err(DseError::config("k", format!("must be 2 or 3, got {k}")));
    }
    Ok(width_pairs(dialogues, k, cfg))
}

/// Concatenation of the outputs for every width in `cfg.query_widths`, in
/// ascending width order.
pub fn build_combined(dialogues: &[Dialogue], cfg: &PairBuildConfig) -> Result<Vec<TrainPair>> {
    cfg.validate()?;
    Ok(cfg
        .query_widths
        .iter()
        .flat_map(|&k| width_pairs(dialogues, k, cfg))
        .collect())
}

/// One `(x, x)` pair per distinct surviving utterance, corpus-wide, in order
/// of first occurrence.
pub fn build_self_pairs(dialogues: &[Dialogue], cfg: &PairBuildConfig) -> Vec<TrainPair> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (d, dialogue) in dialogues.iter().enumerate() {
        for turn in &dialogue.turns {
            let text = turn.text.trim();
            if cfg.apply_length_filter && !passes_length_filter(text) {
                continue;
            }
            if seen.insert(text) {
                out.push(TrainPair {
                    query: text.to_string(),
                    response: text.to_string(),
                    source: PairSource::SelfPair,
                    origin: Some(d),
                });
            }
        }
    }
    out
}

/// Dispatch on a corpus-based strategy. `File` is not corpus-based and is
/// rejected here; use [`load_pair_file`].
pub fn build_pairs(
    dialogues: &[Dialogue],
    strategy: PairStrategy,
    cfg: &PairBuildConfig,
) -> Result<Vec<TrainPair>> {
    let with = |widths: &[usize]| PairBuildConfig {
        query_widths: widths.iter().copied().collect(),
        ..cfg.clone()
    };
    match strategy {
        PairStrategy::Consec => Ok(build_consecutive(dialogues, cfg)),
        PairStrategy::K2 => build_k_to_1(dialogues, 2, cfg),
        PairStrategy::K3 => build_k_to_1(dialogues, 3, cfg),
        PairStrategy::Combined => build_combined(dialogues, &with(&[1, 2, 3])),
        PairStrategy::SelfPairs => Ok(build_self_pairs(dialogues, cfg)),
        PairStrategy::File => Err(DseError::config(
            "strategy",
            "`file` pairs are loaded from a pair file, not built from a corpus",
        )),
    }
}

pub fn parse_pair_file(content: &str, file: &str) -> Result<Vec<TrainPair>> {
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let perr = |message: String| DseError::Parse {
            file: file.to_string(),
            line: idx + 1,
            message,
        };
        if fields.len() != 2 {
            return Err(perr(format!("expected 2 tab-separated fields, found {}", fields.len())));
        }
        if fields.iter().any(|f| f.trim().is_empty()) {
            return Err(perr("empty query or response".into()));
        }
        out.push(TrainPair {
            query: fields[0].to_string(),
            response: fields[1].to_string(),
            source: PairSource::File,
            origin: None,
        });
    }
    Ok(out)
}

pub fn load_pair_file(path: impl AsRef<Path>) -> Result<Vec<TrainPair>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| DseError::io(path, e))?;
    parse_pair_file(&content, &path.display().to_string())
}

fn single_line(text: &str) -> String {
    text.replace(['\t', '\n', '\r'], " ")
}

/// Write pairs as `query<TAB>response` lines. Tabs and line breaks inside a
/// text become spaces, which leaves its tokenization unchanged.
pub fn save_pair_file(pairs: &[TrainPair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut body = String::new();
    for p in pairs {
        body.push_str(&single_line(&p.query));
        body.push('\t');
        body.push_str(&single_line(&p.response));
        body.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| DseError::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| DseError::io(path, e))
}
