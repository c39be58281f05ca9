//! Similarity-based evaluation harness.
//!
//! Every task has a vector-level entry point that works on precomputed
//! embeddings and a text-level wrapper that embeds through an
//! [`Embedder`](crate::encoder::Embedder) first. All decisions use cosine
//! similarity on the EVAL view.
//!
//! Tie conventions: prototype argmax ties go to the smallest label id; a gold
//! response tied with a distractor ranks below it; an NLI triple with equal
//! similarities counts as incorrect; the OOS threshold is strict (`<`).

mod actions;
mod export;
mod fewshot;
mod history;
mod nli;
mod oos;
mod protonet;
mod rank;
mod report;

pub use actions::{
    f1_report, f1_scores, probe_loss_and_grad, train_action_probe, train_probe_on_vectors, ActionProbe, LabelBits,
};
pub use export::{embeddings_to_string, load_embeddings, parse_embeddings, save_embeddings, sidecar_path};
pub use fewshot::sample_few_shot;
pub use history::format_dialogue_history;
pub use nli::{nli_correct, nli_probe, nli_probe_vectors, NliTriple};
pub use oos::{detect_oos, detect_oos_scores, oos_metrics, OosConfig, OosDecision, StatsPopulation, ThresholdRule};
pub use protonet::{
    build_prototypes, build_prototypes_from, classify_protonet, classify_vectors, PrototypeSet, EVAL_EPS,
};
pub use rank::{
    dialogue_rank_instances, rank_topk, rank_topk_detailed, rank_with_candidates, utterance_rank_instances,
    RankInstance, RankOutcome,
};
pub use report::EvalReport;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{DseError, Result};

/// Single-label texts. Label ids index `label_names`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledSet {
    pub items: Vec<(String, usize)>,
    pub label_names: Vec<String>,
}

impl LabeledSet {
    pub fn texts(&self) -> Vec<&str> {
        self.items.iter().map(|(t, _)| t.as_str()).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|&(_, l)| l).collect()
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((t, l)) = self.items.iter().find(|(_, l)| *l >= self.label_names.len()) {
            return Err(DseError::Invalid(format!("label id {l} of {t:?} out of range")));
        }
        Ok(())
    }

    /// Re-express `other`'s labels in this set's label space. Labels unknown
    /// here map to `None` (used for out-of-scope test items).
    pub fn align(&self, other: &LabeledSet) -> Vec<Option<usize>> {
        other
            .items
            .iter()
            .map(|(_, l)| self.label_id(&other.label_names[*l]))
            .collect()
    }
}

fn split_tsv<'a>(line: &'a str, file: &str, lineno: usize, fields: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split('\t').collect();
    if parts.len() != fields {
        return Err(DseError::Parse {
            file: file.to_string(),
            line: lineno,
            message: format!("expected {fields} tab-separated fields, found {}", parts.len()),
        });
    }
    Ok(parts)
}

fn data_lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// `text<TAB>label` lines. Label names are interned in order of appearance.
pub fn parse_labeled(content: &str, file: &str) -> Result<LabeledSet> {
    let mut set = LabeledSet::default();
    let mut ids: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in data_lines(content) {
        let parts = split_tsv(line, file, lineno, 2)?;
        let name = parts[1].trim();
        if name.is_empty() || parts[0].trim().is_empty() {
            return Err(DseError::Parse {
                file: file.to_string(),
                line: lineno,
                message: "empty text or label".into(),
            });
        }
        let id = *ids.entry(name.to_string()).or_insert_with(|| {
            set.label_names.push(name.to_string());
            set.label_names.len() - 1
        });
        set.items.push((parts[0].to_string(), id));
    }
    Ok(set)
}

pub fn load_labeled(path: impl AsRef<Path>) -> Result<LabeledSet> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| DseError::io(path, e))?;
    parse_labeled(&content, &path.display().to_string())
}

/// Multi-label texts: `text<TAB>l1,l2,...` (an empty label field is allowed).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MultiLabelSet {
    pub items: Vec<(String, Vec<usize>)>,
    pub label_names: Vec<String>,
}

impl MultiLabelSet {
    pub fn bits(&self, label_count: usize) -> Vec<LabelBits> {
        self.items
            .iter()
            .map(|(_, ls)| {
                let mut b = vec![false; label_count];
                ls.iter().filter(|&&l| l < label_count).for_each(|&l| b[l] = true);
                b
            })
            .collect()
    }

    /// Map this set's labels into `names`' id space, dropping unknown labels.
    pub fn bits_in(&self, names: &[String]) -> Vec<LabelBits> {
        self.items
            .iter()
            .map(|(_, ls)| {
                let mut b = vec![false; names.len()];
                for &l in ls {
                    if let Some(p) = names.iter().position(|n| *n == self.label_names[l]) {
                        b[p] = true;
                    }
                }
                b
            })
            .collect()
    }
}

pub fn parse_multilabel(content: &str, file: &str) -> Result<MultiLabelSet> {
    let mut set = MultiLabelSet::default();
    let mut ids: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in data_lines(content) {
        let parts = split_tsv(line, file, lineno, 2)?;
        let mut labels = Vec::new();
        for name in parts[1].split(',').map(str::trim).filter(|n| !n.is_empty()) {
            let id = *ids.entry(name.to_string()).or_insert_with(|| {
                set.label_names.push(name.to_string());
                set.label_names.len() - 1
            });
            if !labels.contains(&id) {
                labels.push(id);
            }
        }
        set.items.push((parts[0].to_string(), labels));
    }
    Ok(set)
}

pub fn load_multilabel(path: impl AsRef<Path>) -> Result<MultiLabelSet> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| DseError::io(path, e))?;
    parse_multilabel(&content, &path.display().to_string())
}

/// `anchor<TAB>entailment<TAB>contradiction` lines.
pub fn parse_triples(content: &str, file: &str) -> Result<Vec<NliTriple>> {
    data_lines(content)
        .map(|(lineno, line)| {
            let p = split_tsv(line, file, lineno, 3)?;
            Ok(NliTriple {
                anchor: p[0].to_string(),
                entailment: p[1].to_string(),
                contradiction: p[2].to_string(),
            })
        })
        .collect()
}

pub fn load_triples(path: impl AsRef<Path>) -> Result<Vec<NliTriple>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| DseError::io(path, e))?;
    parse_triples(&content, &path.display().to_string())
}

/// `query<TAB>response` lines for ranking.
pub fn parse_rank_pairs(content: &str, file: &str) -> Result<Vec<RankInstance>> {
    data_lines(content)
        .map(|(lineno, line)| {
            let p = split_tsv(line, file, lineno, 2)?;
            Ok(RankInstance {
                query: p[0].to_string(),
                response: p[1].to_string(),
            })
        })
        .collect()
}

pub fn load_rank_pairs(path: impl AsRef<Path>) -> Result<Vec<RankInstance>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| DseError::io(path, e))?;
    parse_rank_pairs(&content, &path.display().to_string())
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_file() {
        let set = parse_labeled("book a table now\tbooking\n# c\nplay a song\tmusic\nreserve\tbooking\n", "f").unwrap();
        assert_eq!(set.label_names, vec!["booking", "music"]);
        assert_eq!(set.labels(), vec![0, 1, 0]);
        assert!(parse_labeled("no label here\n", "f").is_err());
    }

    #[test]
    fn multilabel_file() {
        let set = parse_multilabel("a\tx,y\nb\t\nc\ty\n", "f").unwrap();
        assert_eq!(set.label_names, vec!["x", "y"]);
        assert_eq!(set.bits(2), vec![vec![true, true], vec![false, false], vec![false, true]]);
    }

    #[test]
    fn triple_file() {
        let t = parse_triples("a\tb\tc\n", "f").unwrap();
        assert_eq!(t[0].contradiction, "c");
        assert!(parse_triples("a\tb\n", "f").is_err());
    }

    #[test]
    fn align_marks_unknown_labels() {
        let train = parse_labeled("x\ta\ny\tb\n", "f").unwrap();
        let test = parse_labeled("p\tb\nq\toos\n", "f").unwrap();
        assert_eq!(train.align(&test), vec![Some(1), None]);
    }
}
