//! Multi-label dialogue-action prediction: a linear probe with elementwise
//! sigmoid on frozen EVAL-view embeddings, and micro/macro F1.

use super::EvalReport;
use crate::encoder::{EmbeddingBatch, Embedder};
use crate::error::{DseError, Result};

/// One flag per label.
pub type LabelBits = Vec<bool>;

#[derive(Debug, Clone, PartialEq)]
pub struct ActionProbe {
    pub dim: usize,
    pub labels: usize,
    /// dim x labels, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(z)) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl ActionProbe {
    pub fn zeros(dim: usize, labels: usize) -> Self {
        ActionProbe {
            dim,
            labels,
            weights: vec![0.0; dim * labels],
            bias: vec![0.0; labels],
        }
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weights[i * self.labels..(i + 1) * self.labels];
            for (zl, &w) in z.iter_mut().zip(row) {
                *zl += xi * w;
            }
        }
        z
    }

    pub fn probabilities(&self, x: &EmbeddingBatch) -> Vec<Vec<f64>> {
        x.iter_rows().map(|r| self.logits(r).into_iter().map(sigmoid).collect()).collect()
    }

    /// A label is predicted when its probability exceeds 0.5.
    pub fn predict(&self, x: &EmbeddingBatch) -> Vec<LabelBits> {
        self.probabilities(x)
            .into_iter()
            .map(|p| p.into_iter().map(|v| v > 0.5).collect())
            .collect()
    }
}

fn check(probe: &ActionProbe, x: &EmbeddingBatch, y: &[LabelBits]) -> Result<()> {
    if x.dim != probe.dim || x.rows != y.len() || y.iter().any(|b| b.len() != probe.labels) {
        return Err(DseError::Shape("probe inputs do not match its dimensions".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy over examples and labels, with its gradient
/// `(d weights, d bias)`.
pub fn probe_loss_and_grad(probe: &ActionProbe, x: &EmbeddingBatch, y: &[LabelBits]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check(probe, x, y)?;
    let scale = 1.0 / (x.rows * probe.labels).max(1) as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; probe.weights.len()];
    let mut gb = vec![0.0; probe.labels];
    for (row, bits) in x.iter_rows().zip(y) {
        let z = probe.logits(row);
        for (l, (&zl, &target)) in z.iter().zip(bits).enumerate() {
            let t = if target { 1.0 } else { 0.0 };
            loss += softplus(zl) - t * zl;
            let dz = (sigmoid(zl) - t) * scale;
            gb[l] += dz;
            for (i, &xi) in row.iter().enumerate() {
                gw[i * probe.labels + l] += xi * dz;
            }
        }
    }
    Ok((loss * scale, gw, gb))
}

/// Full-batch gradient descent from zero weights. Returns the probe and the
/// loss measured before each update.
pub fn train_probe_on_vectors(
    x: &EmbeddingBatch,
    y: &[LabelBits],
    labels: usize,
    epochs: usize,
    lr: f64,
) -> Result<(ActionProbe, Vec<f64>)> {
    if x.rows == 0 || labels == 0 {
        return Err(DseError::Invalid("action probe needs at least one example and one label".into()));
    }
    let mut probe = ActionProbe::zeros(x.dim, labels);
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (loss, gw, gb) = probe_loss_and_grad(&probe, x, y)?;
        history.push(loss);
        probe.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= lr * g);
        probe.bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= lr * g);
    }
    Ok((probe, history))
}

pub fn train_action_probe(
    train: &[(String, LabelBits)],
    embedder: &dyn Embedder,
    epochs: usize,
    lr: f64,
) -> Result<(ActionProbe, Vec<f64>)> {
    let labels = train.first().map_or(0, |(_, b)| b.len());
    let texts: Vec<&str> = train.iter().map(|(t, _)| t.as_str()).collect();
    if texts.is_empty() {
        return Err(DseError::Invalid("action probe needs at least one example".into()));
    }
    let x = embedder.embed(&texts)?;
    let y: Vec<LabelBits> = train.iter().map(|(_, b)| b.clone()).collect();
    train_probe_on_vectors(&x, &y, labels, epochs, lr)
}

/// `(micro, macro)` F1. Micro pools counts over labels; macro averages
/// per-label F1, where a label with no gold and no predictions scores 1 and
/// one with `TP = 0` but some errors scores 0.
pub fn f1_scores(gold: &[LabelBits], pred: &[LabelBits]) -> Result<(f64, f64)> {
    if gold.len() != pred.len() {
        return Err(DseError::Shape(format!("{} gold vs {} predicted label sets", gold.len(), pred.len())));
    }
    let labels = gold.first().or(pred.first()).map_or(0, Vec::len);
    if labels == 0 {
        return Err(DseError::Invalid("F1 needs at least one label".into()));
    }
    if gold.iter().chain(pred).any(|b| b.len() != labels) {
        return Err(DseError::Shape("label sets of different widths".into()));
    }
    let mut counts = vec![(0usize, 0usize, 0usize); labels];
    for (g, p) in gold.iter().zip(pred) {
        for l in 0..labels {
            let c = &mut counts[l];
            match (g[l], p[l]) {
                (true, true) => c.0 += 1,
                (false, true) => c.1 += 1,
                (true, false) => c.2 += 1,
                (false, false) => {}
            }
        }
    }
    let f1 = |(tp, fp, fn_): (usize, usize, usize)| {
        if tp + fp + fn_ == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    let pooled = counts
        .iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let macro_f1 = counts.iter().map(|&c| f1(c)).sum::<f64>() / labels as f64;
    Ok((f1(pooled), macro_f1))
}

pub fn f1_report(gold: &[LabelBits], pred: &[LabelBits]) -> Result<EvalReport> {
    let (micro, macro_f1) = f1_scores(gold, pred)?;
    let mut report = EvalReport::new("actions");
    report.set("Micro-F1", micro);
    report.set("Macro-F1", macro_f1);
    report.support.insert("examples".into(), gold.len());
    report.support.insert("labels".into(), gold.first().map_or(0, Vec::len));
    Ok(report)
}
