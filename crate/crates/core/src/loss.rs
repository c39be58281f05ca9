//! Hard-negative-weighted symmetric contrastive loss.
//!
//! A batch of `M` pairs is laid out as `2M` rows: row `i` and row `i + M` are
//! the query and response of pair `i`. Every row is an anchor; its positive is
//! its partner and its negatives are the other `2M - 2` rows. For anchor `a`
//! with cosine similarities `s` and temperature `t`:
//!
//! ```text
//! alpha_aj = exp(s_aj / t) / mean_{k in N(a)} exp(s_ak / t)
//! l_a      = -s_ap / t + logsumexp({s_ap / t} U {alpha_aj * s_aj / t : j in N(a)})
//! L        = (1 / 2M) * sum_a l_a
//! ```
//!
//! The weights are recomputed from the current embeddings at every call and
//! treated as constants when differentiating.

use crate::encoder::{EmbeddingBatch, EncoderModel, ForwardTape, GradientSet, Scalar};
use crate::error::{DseError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
    pub hard_negatives: bool,
    pub eps_norm: f64,
    /// Include the positive term in the softmax denominator (weight 1).
    pub positive_in_denominator: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 0.05,
            hard_negatives: true,
            eps_norm: 1e-12,
            positive_in_denominator: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DseError::config(
                "temperature",
                format!("must be a positive finite number, got {}", self.temperature),
            ));
        }
        if !(self.eps_norm > 0.0) {
            return Err(DseError::config("eps_norm", "must be positive"));
        }
        Ok(())
    }
}

/// `2M` embeddings where rows `i` and `i + M` form pair `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub embeddings: EmbeddingBatch,
}

impl TrainBatch {
    pub fn new(embeddings: EmbeddingBatch) -> Result<Self> {
        if embeddings.rows % 2 != 0 {
            return Err(DseError::Shape(format!(
                "a pair batch needs an even row count, got {}",
                embeddings.rows
            )));
        }
        if embeddings.rows < 4 {
            return Err(DseError::Invalid(format!(
                "a pair batch needs at least 2 pairs, got {}",
                embeddings.rows / 2
            )));
        }
        Ok(TrainBatch { embeddings })
    }

    /// Queries stacked on top of responses.
    pub fn from_sides(queries: &EmbeddingBatch, responses: &EmbeddingBatch) -> Result<Self> {
        if queries.rows != responses.rows {
            return Err(DseError::Shape("query and response counts differ".into()));
        }
        Self::new(queries.concat(responses)?)
    }

    pub fn pairs(&self) -> usize {
        self.embeddings.rows / 2
    }

    pub fn rows(&self) -> usize {
        self.embeddings.rows
    }

    pub fn positive_of(&self, anchor: usize) -> usize {
        (anchor + self.pairs()) % self.rows()
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine_sim(u: &[f64], v: &[f64], eps_norm: f64) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let s = dot / (norm(u).max(eps_norm) * norm(v).max(eps_norm));
    s.clamp(-1.0, 1.0)
}

fn similarity_matrix(batch: &TrainBatch, eps_norm: f64) -> Vec<f64> {
    let n = batch.rows();
    let e = &batch.embeddings;
    let mut s = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let v = cosine_sim(e.row(a), e.row(b), eps_norm);
            s[a * n + b] = v;
            s[b * n + a] = v;
        }
    }
    s
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Per-anchor weights over negatives. Entries for the anchor itself and its
/// positive are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaWeights {
    rows: usize,
    pairs: usize,
    weights: Vec<f64>,
}

impl AlphaWeights {
    pub fn get(&self, anchor: usize, other: usize) -> Option<f64> {
        let positive = (anchor + self.pairs) % self.rows;
        (other != anchor && other != positive).then(|| self.weights[anchor * self.rows + other])
    }

    /// `(index, alpha)` for every negative of `anchor`, ascending index.
    pub fn negatives(&self, anchor: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.rows).filter_map(move |j| self.get(anchor, j).map(|w| (j, w)))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

fn alpha_from_sims(sims: &[f64], rows: usize, pairs: usize, cfg: &LossConfig) -> AlphaWeights {
    let mut weights = vec![0.0; rows * rows];
    for a in 0..rows {
        let positive = (a + pairs) % rows;
        let negs = || (0..rows).filter(move |&j| j != a && j != positive);
        if cfg.hard_negatives {
            let row = &sims[a * rows..(a + 1) * rows];
            let log_mean = logsumexp(negs().map(|k| row[k] / cfg.temperature))
                - ((rows - 2) as f64).ln();
            for j in negs() {
                weights[a * rows + j] = (row[j] / cfg.temperature - log_mean).exp();
            }
        } else {
            for j in negs() {
                weights[a * rows + j] = 1.0;
            }
        }
    }
    AlphaWeights {
        rows,
        pairs,
        weights,
    }
}

pub fn compute_alpha(batch: &TrainBatch, cfg: &LossConfig) -> AlphaWeights {
    let sims = similarity_matrix(batch, cfg.eps_norm);
    alpha_from_sims(&sims, batch.rows(), batch.pairs(), cfg)
}

/// Softmax logits of one anchor: the positive first, then negatives in
/// ascending index order.
fn anchor_logits(
    a: usize,
    sims: &[f64],
    rows: usize,
    alphas: &AlphaWeights,
    cfg: &LossConfig,
) -> (f64, Vec<(usize, f64, f64)>) {
    let positive = (a + alphas.pairs) % rows;
    let pos = sims[a * rows + positive] / cfg.temperature;
    let negs = alphas
        .negatives(a)
        .map(|(j, w)| (j, w, w * sims[a * rows + j] / cfg.temperature))
        .collect();
    (pos, negs)
}

fn anchor_loss_from(
    a: usize,
    sims: &[f64],
    rows: usize,
    alphas: &AlphaWeights,
    cfg: &LossConfig,
) -> Result<f64> {
    let (pos, negs) = anchor_logits(a, sims, rows, alphas, cfg);
    let neg_logits = negs.iter().map(|&(_, _, z)| z);
    let lse = if cfg.positive_in_denominator {
        logsumexp(std::iter::once(pos).chain(neg_logits))
    } else {
        logsumexp(neg_logits)
    };
    let loss = lse - pos;
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(DseError::NonFiniteLoss { anchor: a })
    }
}

pub fn anchor_loss(
    anchor: usize,
    batch: &TrainBatch,
    alphas: &AlphaWeights,
    cfg: &LossConfig,
) -> Result<f64> {
    if anchor >= batch.rows() || alphas.rows != batch.rows() {
        return Err(DseError::Shape("anchor or weights do not match the batch".into()));
    }
    let sims = similarity_matrix(batch, cfg.eps_norm);
    anchor_loss_from(anchor, &sims, batch.rows(), alphas, cfg)
}

/// Symmetric batch loss, summed in ascending anchor order.
pub fn batch_loss(batch: &TrainBatch, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let n = batch.rows();
    let sims = similarity_matrix(batch, cfg.eps_norm);
    let alphas = alpha_from_sims(&sims, n, batch.pairs(), cfg);
    let mut total = 0.0;
    for a in 0..n {
        total += anchor_loss_from(a, &sims, n, &alphas, cfg)?;
    }
    Ok(total / n as f64)
}

/// Gradient of `cos(u, v)` with respect to `u`, matching [`cosine_sim`]'s
/// norm guard (clamping is ignored).
fn cosine_grad_wrt_first(u: &[f64], v: &[f64], s: f64, eps: f64, out: &mut [f64], scale: f64) {
    let nu = norm(u);
    let nv = norm(v).max(eps);
    if nu > eps {
        let inv = 1.0 / (nu * nv);
        let self_term = s / (nu * nu);
        for ((o, &ui), &vi) in out.iter_mut().zip(u).zip(v) {
            *o += scale * (vi * inv - self_term * ui);
        }
    } else {
        let inv = 1.0 / (eps * nv);
        for (o, &vi) in out.iter_mut().zip(v) {
            *o += scale * vi * inv;
        }
    }
}

/// Loss and its gradient with respect to every embedding row, with the
/// weights held fixed.
pub fn loss_and_embedding_grad(batch: &TrainBatch, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let n = batch.rows();
    let sims = similarity_matrix(batch, cfg.eps_norm);
    let alphas = alpha_from_sims(&sims, n, batch.pairs(), cfg);
    let inv_n = 1.0 / n as f64;
    let inv_t = 1.0 / cfg.temperature;

    // dL/ds_aj, treating s_aj as a function of (e_a, e_j).
    let mut ds = vec![0.0; n * n];
    let mut total = 0.0;
    for a in 0..n {
        total += anchor_loss_from(a, &sims, n, &alphas, cfg)?;
        let (pos, negs) = anchor_logits(a, &sims, n, &alphas, cfg);
        let lse = if cfg.positive_in_denominator {
            logsumexp(std::iter::once(pos).chain(negs.iter().map(|&(_, _, z)| z)))
        } else {
            logsumexp(negs.iter().map(|&(_, _, z)| z))
        };
        let p_pos = if cfg.positive_in_denominator {
            (pos - lse).exp()
        } else {
            0.0
        };
        let positive = batch.positive_of(a);
        ds[a * n + positive] += (p_pos - 1.0) * inv_t * inv_n;
        for &(j, w, z) in &negs {
            ds[a * n + j] += (z - lse).exp() * w * inv_t * inv_n;
        }
    }

    let dim = batch.embeddings.dim;
    let e = &batch.embeddings;
    let mut grad = vec![0.0; n * dim];
    for a in 0..n {
        for j in 0..n {
            let c = ds[a * n + j];
            if c == 0.0 {
                continue;
            }
            let s = sims[a * n + j];
            let (ea, ej) = (e.row(a), e.row(j));
            cosine_grad_wrt_first(ea, ej, s, cfg.eps_norm, &mut grad[a * dim..(a + 1) * dim], c);
            cosine_grad_wrt_first(ej, ea, s, cfg.eps_norm, &mut grad[j * dim..(j + 1) * dim], c);
        }
    }
    Ok((total * inv_n, grad))
}

/// Loss and parameter gradients for one batch whose query and response sides
/// were produced by TRAIN-view forwards recorded in `query_tape` and
/// `response_tape`.
pub fn batch_loss_and_grad<T: Scalar>(
    model: &EncoderModel<T>,
    queries: &EmbeddingBatch,
    query_tape: &ForwardTape,
    responses: &EmbeddingBatch,
    response_tape: &ForwardTape,
    cfg: &LossConfig,
) -> Result<(f64, GradientSet)> {
    let mut grads = GradientSet::zeros(&model.config);
    let loss = batch_loss_and_grad_into(model, queries, query_tape, responses, response_tape, cfg, &mut grads)?;
    Ok((loss, grads))
}

/// Like [`batch_loss_and_grad`] but accumulates into `grads`.
pub fn batch_loss_and_grad_into<T: Scalar>(
    model: &EncoderModel<T>,
    queries: &EmbeddingBatch,
    query_tape: &ForwardTape,
    responses: &EmbeddingBatch,
    response_tape: &ForwardTape,
    cfg: &LossConfig,
    grads: &mut GradientSet,
) -> Result<f64> {
    let batch = TrainBatch::from_sides(queries, responses)?;
    let (loss, grad) = loss_and_embedding_grad(&batch, cfg)?;
    let split = queries.rows * queries.dim;
    model.backward_into(query_tape, &grad[..split], grads)?;
    model.backward_into(response_tape, &grad[split..], grads)?;
    Ok(loss)
}

/// Plain symmetric NT-Xent over the same layout: every other row in the
/// denominator, no weighting. Kept separate from [`batch_loss`] as a reference.
pub fn ntxent_reference(batch: &TrainBatch, temperature: f64, eps_norm: f64) -> f64 {
    let n = batch.rows();
    let m = n / 2;
    let unit: Vec<Vec<f64>> = batch
        .embeddings
        .iter_rows()
        .map(|r| {
            let len = r.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps_norm);
            r.iter().map(|x| x / len).collect()
        })
        .collect();
    let mut sum = 0.0;
    for i in 0..n {
        let target = if i < m { i + m } else { i - m };
        let logits: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>() / temperature)
            .collect();
        let target_logit =
            unit[i].iter().zip(&unit[target]).map(|(a, b)| a * b).sum::<f64>() / temperature;
        let shift = logits.iter().cloned().fold(f64::MIN, f64::max);
        let denom: f64 = logits.iter().map(|z| (z - shift).exp()).sum();
        sum += -(target_logit - shift - denom.ln());
    }
    sum / n as f64
}
