use std::str::FromStr;

use super::protonet::{classify_vectors, PrototypeSet};
use super::EvalReport;
use crate::encoder::Embedder;
use crate::error::{DseError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdRule {
    Mean,
    MeanMinusStd,
}

impl FromStr for ThresholdRule {
    type Err = DseError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ThresholdRule::Mean),
            "mean-std" => Ok(ThresholdRule::MeanMinusStd),
            other => Err(DseError::config("threshold_rule", format!("{other:?} is not mean|mean-std"))),
        }
    }
}

impl ThresholdRule {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdRule::Mean => "mean",
            ThresholdRule::MeanMinusStd => "mean-std",
        }
    }
}

/// Which scores feed the threshold statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsPopulation {
    /// Every evaluated query, out-of-scope ones included.
    TestAll,
    /// Only queries whose gold label is in scope.
    TestInOnly,
}

impl FromStr for StatsPopulation {
    type Err = DseError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test-all" => Ok(StatsPopulation::TestAll),
            "test-in-only" => Ok(StatsPopulation::TestInOnly),
            other => Err(DseError::config(
                "stats_population",
                format!("{other:?} is not test-all|test-in-only"),
            )),
        }
    }
}

impl StatsPopulation {
    pub fn name(self) -> &'static str {
        match self {
            StatsPopulation::TestAll => "test-all",
            StatsPopulation::TestInOnly => "test-in-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OosConfig {
    pub threshold_rule: ThresholdRule,
    pub stats_population: StatsPopulation,
    /// Replaces the computed threshold.
    pub threshold_override: Option<f64>,
}

impl Default for OosConfig {
    fn default() -> Self {
        OosConfig {
            threshold_rule: ThresholdRule::Mean,
            stats_population: StatsPopulation::TestAll,
            threshold_override: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OosDecision {
    pub out_of_scope: bool,
    /// Best prototype, set only when the query is kept in scope.
    pub label: Option<usize>,
    pub max_sim: f64,
}

/// Threshold the `(argmax label, max similarity)` scores. `in_scope` marks
/// gold in-scope queries and is required for [`StatsPopulation::TestInOnly`].
/// Returns the decisions and the threshold used.
pub fn detect_oos_scores(
    scores: &[(usize, f64)],
    cfg: &OosConfig,
    in_scope: Option<&[bool]>,
) -> Result<(Vec<OosDecision>, f64)> {
    if scores.len() < 2 {
        return Err(DseError::Invalid("out-of-scope detection needs at least 2 queries".into()));
    }
    let threshold = match cfg.threshold_override {
        Some(t) => t,
        None => {
            let pool: Vec<f64> = match cfg.stats_population {
                StatsPopulation::TestAll => scores.iter().map(|s| s.1).collect(),
                StatsPopulation::TestInOnly => {
                    let mask = in_scope.ok_or_else(|| {
                        DseError::config("stats_population", "test-in-only needs gold in-scope marks")
                    })?;
                    if mask.len() != scores.len() {
                        return Err(DseError::Shape("in-scope mask length differs from queries".into()));
                    }
                    scores.iter().zip(mask).filter(|(_, &m)| m).map(|(s, _)| s.1).collect()
                }
            };
            if pool.is_empty() {
                return Err(DseError::Invalid("no scores in the statistics population".into()));
            }
            let n = pool.len() as f64;
            let mean = pool.iter().sum::<f64>() / n;
            let std = (pool.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            match cfg.threshold_rule {
                ThresholdRule::Mean => mean,
                ThresholdRule::MeanMinusStd => mean - std,
            }
        }
    };
    let decisions = scores
        .iter()
        .map(|&(label, max_sim)| {
            let out = max_sim < threshold;
            OosDecision {
                out_of_scope: out,
                label: (!out).then_some(label),
                max_sim,
            }
        })
        .collect();
    Ok((decisions, threshold))
}

pub fn detect_oos(
    queries: &[&str],
    protos: &PrototypeSet,
    cfg: &OosConfig,
    embedder: &dyn Embedder,
    in_scope: Option<&[bool]>,
) -> Result<(Vec<OosDecision>, f64)> {
    let scores = classify_vectors(&embedder.embed(queries)?, protos)?;
    detect_oos_scores(&scores, cfg, in_scope)
}

/// `gold[i] = None` marks an out-of-scope query.
///
/// - `Accuracy`: in-scope queries kept with the right label, plus OOS queries
///   flagged, over all queries.
/// - `In-Accuracy`: the same restricted to in-scope queries.
/// - `OOS-Accuracy`: binary in/out accuracy over all queries.
/// - `OOS-Recall`: flagged fraction of OOS queries (this is also the
///   accuracy over OOS queries only).
///
/// A metric whose population is empty is omitted.
pub fn oos_metrics(gold: &[Option<usize>], predictions: &[OosDecision]) -> Result<EvalReport> {
    if gold.len() != predictions.len() {
        return Err(DseError::Shape(format!(
            "{} gold labels vs {} predictions",
            gold.len(),
            predictions.len()
        )));
    }
    let (mut correct, mut binary_correct) = (0usize, 0usize);
    let (mut n_in, mut in_correct) = (0usize, 0usize);
    let (mut n_oos, mut oos_flagged) = (0usize, 0usize);
    for (g, p) in gold.iter().zip(predictions) {
        match g {
            Some(label) => {
                n_in += 1;
                if !p.out_of_scope {
                    binary_correct += 1;
                    if p.label == Some(*label) {
                        correct += 1;
                        in_correct += 1;
                    }
                }
            }
            None => {
                n_oos += 1;
                if p.out_of_scope {
                    binary_correct += 1;
                    correct += 1;
                    oos_flagged += 1;
                }
            }
        }
    }
    let mut report = EvalReport::new("oos");
    let total = gold.len();
    if total > 0 {
        report.set("Accuracy", correct as f64 / total as f64);
        report.set("OOS-Accuracy", binary_correct as f64 / total as f64);
    }
    if n_in > 0 {
        report.set("In-Accuracy", in_correct as f64 / n_in as f64);
    }
    if n_oos > 0 {
        report.set("OOS-Recall", oos_flagged as f64 / n_oos as f64);
    }
    report.support.insert("queries".into(), total);
    report.support.insert("in_scope".into(), n_in);
    report.support.insert("out_of_scope".into(), n_oos);
    Ok(report)
}
