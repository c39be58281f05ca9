//! Brute-force oracles and random instance generators shared by the
//! integration tests and the acceptance run. The oracles are written from the
//! task definitions, without calling the library routines they check.

#![allow(dead_code)]

use std::collections::HashMap;

use dse_core::corpus::{Dialogue, Speaker, Turn};
use dse_core::encoder::{EmbeddingBatch, Embedder, View};
use dse_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Looks texts up in a fixed table.
pub struct Table(pub HashMap<String, Vec<f64>>);

impl Embedder for Table {
    fn embed(&self, texts: &[&str]) -> Result<EmbeddingBatch> {
        let rows: Vec<Vec<f64>> = texts
            .iter()
            .map(|t| self.0.get(*t).cloned().unwrap_or_else(|| panic!("unknown text {t:?}")))
            .collect();
        EmbeddingBatch::from_rows(&rows, View::Eval)
    }
}

/// Cosine with the same norm guard and clamp as the evaluation harness.
pub fn cos(u: &[f64], v: &[f64]) -> f64 {
    let eps = 1e-12;
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (nu.max(eps) * nv.max(eps))).clamp(-1.0, 1.0)
}

/// Small-integer vectors: lots of exact duplicates and exact ties.
pub fn grid_vec(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| r.gen_range(-2i32..=2) as f64).collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

pub fn gauss_vec(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let (u1, u2): (f64, f64) = (r.gen_range(1e-12..1.0), r.gen());
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

/// Prototype classification: mean support vector per label, then the label
/// with the highest cosine; the first label wins a tie.
pub fn oracle_protonet(support: &[(Vec<f64>, usize)], labels: usize, queries: &[Vec<f64>]) -> Vec<(usize, f64)> {
    let dim = support[0].0.len();
    let mut protos = Vec::new();
    for l in 0..labels {
        let members: Vec<&Vec<f64>> = support.iter().filter(|(_, x)| *x == l).map(|(v, _)| v).collect();
        let mut p = vec![0.0; dim];
        for m in &members {
            for k in 0..dim {
                p[k] += m[k];
            }
        }
        for x in p.iter_mut() {
            *x /= members.len() as f64;
        }
        protos.push(p);
    }
    queries
        .iter()
        .map(|q| {
            let sims: Vec<f64> = protos.iter().map(|p| cos(q, p)).collect();
            let best = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let label = sims.iter().position(|&s| s == best).unwrap();
            (label, best)
        })
        .collect()
}

#[derive(Debug, PartialEq)]
pub struct OosCounts {
    pub flagged: Vec<bool>,
    pub accuracy: Option<f64>,
    pub in_accuracy: Option<f64>,
    pub oos_accuracy: Option<f64>,
    pub oos_recall: Option<f64>,
}

/// Mean-threshold OOS detection over all scores, then the four accuracies.
pub fn oracle_oos(scores: &[(usize, f64)], gold: &[Option<usize>]) -> OosCounts {
    let threshold = scores.iter().map(|s| s.1).sum::<f64>() / scores.len() as f64;
    let flagged: Vec<bool> = scores.iter().map(|s| s.1 < threshold).collect();
    let frac = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let idx_in: Vec<usize> = (0..gold.len()).filter(|&i| gold[i].is_some()).collect();
    let idx_oos: Vec<usize> = (0..gold.len()).filter(|&i| gold[i].is_none()).collect();
    let right_in = idx_in.iter().filter(|&&i| !flagged[i] && Some(scores[i].0) == gold[i]).count();
    let kept_in = idx_in.iter().filter(|&&i| !flagged[i]).count();
    let caught = idx_oos.iter().filter(|&&i| flagged[i]).count();
    OosCounts {
        accuracy: frac(right_in + caught, gold.len()),
        in_accuracy: frac(right_in, idx_in.len()),
        oos_accuracy: frac(kept_in + caught, gold.len()),
        oos_recall: frac(caught, idx_oos.len()),
        flagged,
    }
}

/// Rank of the gold after sorting all candidates by descending cosine, with
/// the gold placed after every candidate it ties with.
pub fn oracle_rank(query: &[f64], gold: &[f64], distractors: &[Vec<f64>]) -> usize {
    let mut scored: Vec<(f64, bool)> = distractors.iter().map(|d| (cos(query, d), false)).collect();
    scored.push((cos(query, gold), true));
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.iter().position(|s| s.1).unwrap() + 1
}

pub fn oracle_nli(triples: &[(Vec<f64>, Vec<f64>, Vec<f64>)]) -> f64 {
    let ok = triples.iter().filter(|(a, e, c)| cos(a, e) > cos(a, c)).count();
    ok as f64 / triples.len() as f64
}

/// Micro and macro F1 from per-label set intersections.
pub fn oracle_f1(gold: &[Vec<bool>], pred: &[Vec<bool>]) -> (f64, f64) {
    let labels = gold[0].len();
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        if tp + fp + fn_ == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    let mut macro_sum = 0.0;
    for l in 0..labels {
        let g: Vec<usize> = (0..gold.len()).filter(|&i| gold[i][l]).collect();
        let p: Vec<usize> = (0..pred.len()).filter(|&i| pred[i][l]).collect();
        let tp = g.iter().filter(|i| p.contains(i)).count();
        let (fp, fn_) = (p.len() - tp, g.len() - tp);
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        macro_sum += f1(tp, fp, fn_);
    }
    (f1(tp_all, fp_all, fn_all), macro_sum / labels as f64)
}

/// A dialogue whose turns have 1..=7 words, so the length filter drops some.
pub fn random_dialogue(r: &mut impl Rng, id: usize) -> Dialogue {
    let n = r.gen_range(1..=12);
    let turns = (0..n)
        .map(|t| {
            let words = r.gen_range(1..=7);
            let text: Vec<String> = (0..words).map(|w| format!("w{id}x{t}y{w}")).collect();
            let speaker = if t % 2 == 0 { Speaker::Usr } else { Speaker::Sys };
            Turn::new(speaker, text.join(" "))
        })
        .collect();
    Dialogue {
        id: format!("d{id}"),
        turns,
    }
}

/// Lengths of maximal runs of turns with at least four words.
pub fn surviving_run_lengths(d: &Dialogue) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut cur = 0;
    for t in &d.turns {
        if t.text.split_whitespace().count() >= 4 {
            cur += 1;
        } else {
            if cur > 0 {
                runs.push(cur);
            }
            cur = 0;
        }
    }
    if cur > 0 {
        runs.push(cur);
    }
    runs
}

/// Every `(query, response)` of width `k` by direct index enumeration.
pub fn enumerate_pairs(d: &Dialogue, k: usize) -> Vec<(String, String)> {
    let keep: Vec<bool> = d.turns.iter().map(|t| t.text.split_whitespace().count() >= 4).collect();
    let mut out = Vec::new();
    for end in 0..d.turns.len() {
        if end < k {
            continue;
        }
        let start = end - k;
        if (start..=end).all(|i| keep[i]) {
            let q: Vec<&str> = d.turns[start..end].iter().map(|t| t.text.as_str()).collect();
            out.push((q.join(" [SEP] "), d.turns[end].text.clone()));
        }
    }
    out
}
