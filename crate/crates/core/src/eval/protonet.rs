use super::LabeledSet;
use crate::encoder::{EmbeddingBatch, Embedder};
use crate::error::{DseError, Result};
use crate::loss::{cosine_sim, norm};

/// Norm guard used for every evaluation-time cosine.
pub const EVAL_EPS: f64 = 1e-12;

/// One prototype per label id.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub vectors: Vec<Vec<f64>>,
    pub support_counts: Vec<usize>,
}

impl PrototypeSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Mean of the support embeddings of each label. With `normalize`, rows are
/// scaled to unit length before averaging.
pub fn build_prototypes_from(
    embeddings: &EmbeddingBatch,
    labels: &[usize],
    label_count: usize,
    normalize: bool,
) -> Result<PrototypeSet> {
    if embeddings.rows != labels.len() {
        return Err(DseError::Shape("support embeddings and labels differ in length".into()));
    }
    if labels.is_empty() {
        return Err(DseError::Invalid("empty support set".into()));
    }
    let dim = embeddings.dim;
    let mut sums = vec![vec![0.0; dim]; label_count];
    let mut counts = vec![0usize; label_count];
    for (row, &l) in embeddings.iter_rows().zip(labels) {
        if l >= label_count {
            return Err(DseError::Invalid(format!("label id {l} out of range")));
        }
        let scale = if normalize { 1.0 / norm(row).max(EVAL_EPS) } else { 1.0 };
        for (s, &x) in sums[l].iter_mut().zip(row) {
            *s += x * scale;
        }
        counts[l] += 1;
    }
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(DseError::Invalid(format!("label {l} has no support examples")));
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= c as f64);
    }
    Ok(PrototypeSet {
        vectors: sums,
        support_counts: counts,
    })
}

pub fn build_prototypes(support: &LabeledSet, embedder: &dyn Embedder, normalize: bool) -> Result<PrototypeSet> {
    support.validate()?;
    if let Some(name) = support
        .label_names
        .iter()
        .enumerate()
        .find(|(l, _)| !support.items.iter().any(|(_, x)| x == l))
        .map(|(_, n)| n)
    {
        return Err(DseError::Invalid(format!("label {name:?} has no support examples")));
    }
    let emb = embedder.embed(&support.texts())?;
    build_prototypes_from(&emb, &support.labels(), support.label_names.len(), normalize)
}

/// `(label, max similarity)` per query row.
pub fn classify_vectors(queries: &EmbeddingBatch, protos: &PrototypeSet) -> Result<Vec<(usize, f64)>> {
    if protos.is_empty() {
        return Err(DseError::Invalid("no prototypes".into()));
    }
    Ok(queries
        .iter_rows()
        .map(|q| {
            let mut best = (0, f64::NEG_INFINITY);
            for (l, p) in protos.vectors.iter().enumerate() {
                let s = cosine_sim(q, p, EVAL_EPS);
                if s > best.1 {
                    best = (l, s);
                }
            }
            best
        })
        .collect())
}

pub fn classify_protonet(queries: &[&str], protos: &PrototypeSet, embedder: &dyn Embedder) -> Result<Vec<(usize, f64)>> {
    classify_vectors(&embedder.embed(queries)?, protos)
}
