use rand::seq::index;

use super::history::format_dialogue_history;
use super::protonet::EVAL_EPS;
use super::EvalReport;
use crate::corpus::Dialogue;
use crate::encoder::{EmbeddingBatch, Embedder};
use crate::error::{DseError, Result};
use crate::loss::cosine_sim;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankInstance {
    pub query: String,
    pub response: String,
}

/// Utterance-level instances: each turn is a query for the turn after it.
pub fn utterance_rank_instances(dialogues: &[Dialogue]) -> Vec<RankInstance> {
    dialogues
        .iter()
        .flat_map(|d| {
            d.turns.windows(2).map(|w| RankInstance {
                query: w[0].text.clone(),
                response: w[1].text.clone(),
            })
        })
        .collect()
}

/// Dialogue-level instances: the formatted history up to turn `t` is the
/// query for turn `t`.
pub fn dialogue_rank_instances(dialogues: &[Dialogue], max_tokens: usize) -> Vec<RankInstance> {
    dialogues
        .iter()
        .flat_map(|d| {
            (1..d.turns.len()).map(move |t| RankInstance {
                query: format_dialogue_history(&d.turns[..t], max_tokens),
                response: d.turns[t].text.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOutcome {
    pub report: EvalReport,
    /// 1-based rank of the gold response per query.
    pub ranks: Vec<usize>,
    /// Pool indices of the sampled distractors per query.
    pub distractors: Vec<Vec<usize>>,
}

/// 1-based rank of the gold among `gold` plus `distractors`; distractors
/// scoring at least as high as the gold rank above it.
pub fn rank_with_candidates(query: &[f64], gold: &[f64], distractors: &[&[f64]]) -> usize {
    let gold_sim = cosine_sim(query, gold, EVAL_EPS);
    1 + distractors
        .iter()
        .filter(|d| cosine_sim(query, d, EVAL_EPS) >= gold_sim)
        .count()
}

fn topk_report(ranks: &[usize], k_values: &[usize], n_candidates: usize, seed: u64) -> EvalReport {
    let mut report = EvalReport::new("rank");
    report.seed = seed;
    for &k in k_values {
        let hits = ranks.iter().filter(|&&r| r <= k).count();
        report.set(&format!("Top-{k}"), hits as f64 / ranks.len().max(1) as f64);
    }
    report.support.insert("queries".into(), ranks.len());
    report.support.insert("candidates".into(), n_candidates);
    report
}

/// Rank each gold response against `n_candidates - 1` distractors drawn
/// without replacement from `pool` entries whose text differs from the gold.
/// Distractor draws depend only on `(seed, query index)`.
pub fn rank_topk_detailed(
    queries: &[&str],
    gold_responses: &[&str],
    pool: &[&str],
    k_values: &[usize],
    n_candidates: usize,
    seed: u64,
    embedder: &dyn Embedder,
) -> Result<RankOutcome> {
    if queries.len() != gold_responses.len() {
        return Err(DseError::Shape("queries and gold responses differ in length".into()));
    }
    if n_candidates < 1 {
        return Err(DseError::config("n_candidates", "must be >= 1"));
    }
    let q = embedder.embed(queries)?;
    let g = embedder.embed(gold_responses)?;
    let p = if pool.is_empty() {
        EmbeddingBatch::new(0, q.dim, Vec::new(), q.view)?
    } else {
        embedder.embed(pool)?
    };
    let mut ranks = Vec::with_capacity(queries.len());
    let mut distractors = Vec::with_capacity(queries.len());
    for (i, gold_text) in gold_responses.iter().enumerate() {
        let eligible: Vec<usize> = (0..pool.len()).filter(|&j| pool[j] != *gold_text).collect();
        let need = n_candidates - 1;
        if eligible.len() < need {
            return Err(DseError::Invalid(format!(
                "pool has {} responses other than the gold for query {i}, need {need}",
                eligible.len()
            )));
        }
        let mut rng = rng::rng_from(seed, &[0x7A4C, i as u64]);
        let chosen: Vec<usize> = index::sample(&mut rng, eligible.len(), need)
            .into_iter()
            .map(|k| eligible[k])
            .collect();
        let rows: Vec<&[f64]> = chosen.iter().map(|&j| p.row(j)).collect();
        ranks.push(rank_with_candidates(q.row(i), g.row(i), &rows));
        distractors.push(chosen);
    }
    Ok(RankOutcome {
        report: topk_report(&ranks, k_values, n_candidates, seed),
        ranks,
        distractors,
    })
}

pub fn rank_topk(
    queries: &[&str],
    gold_responses: &[&str],
    pool: &[&str],
    k_values: &[usize],
    n_candidates: usize,
    seed: u64,
    embedder: &dyn Embedder,
) -> Result<EvalReport> {
    rank_topk_detailed(queries, gold_responses, pool, k_values, n_candidates, seed, embedder).map(|o| o.report)
}
