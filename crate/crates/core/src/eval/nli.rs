use super::protonet::EVAL_EPS;
use crate::encoder::{EmbeddingBatch, Embedder};
use crate::error::{DseError, Result};
use crate::loss::cosine_sim;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NliTriple {
    pub anchor: String,
    pub entailment: String,
    pub contradiction: String,
}

/// Strictly closer to the entailment than to the contradiction.
pub fn nli_correct(anchor: &[f64], entailment: &[f64], contradiction: &[f64]) -> bool {
    cosine_sim(anchor, entailment, EVAL_EPS) > cosine_sim(anchor, contradiction, EVAL_EPS)
}

pub fn nli_probe_vectors(anchors: &EmbeddingBatch, entail: &EmbeddingBatch, contra: &EmbeddingBatch) -> Result<f64> {
    if anchors.rows == 0 || anchors.rows != entail.rows || anchors.rows != contra.rows {
        return Err(DseError::Shape("NLI probe needs aligned, non-empty triples".into()));
    }
    let correct = (0..anchors.rows)
        .filter(|&i| nli_correct(anchors.row(i), entail.row(i), contra.row(i)))
        .count();
    Ok(correct as f64 / anchors.rows as f64)
}

pub fn nli_probe(triples: &[NliTriple], embedder: &dyn Embedder) -> Result<f64> {
    if triples.is_empty() {
        return Err(DseError::Invalid("NLI probe needs at least one triple".into()));
    }
    let col = |f: fn(&NliTriple) -> &str| -> Vec<&str> { triples.iter().map(f).collect() };
    let a = embedder.embed(&col(|t| &t.anchor))?;
    let e = embedder.embed(&col(|t| &t.entailment))?;
    let c = embedder.embed(&col(|t| &t.contradiction))?;
    nli_probe_vectors(&a, &e, &c)
}
