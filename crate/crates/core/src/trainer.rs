//! Batching, Adam with two learning-rate groups, the training loop and
//! checkpoint persistence.

mod checkpoint;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, train_config_digest, Checkpoint,
    CHECKPOINT_MAGIC,
};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::corpus::TokenSeq;
use crate::encoder::{EncoderConfig, EncoderModel, ForwardMode, GradientSet, ParamSet, Scalar};
use crate::error::{DseError, Result};
use crate::loss::{batch_loss_and_grad_into, LossConfig};
use crate::pairs::TrainPair;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate of the contrastive head (W1, b1, W2, b2).
    pub lr_head: f64,
    /// Learning rate of the embedding table.
    pub lr_backbone: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub shuffle_seed: u64,
    pub init_seed: u64,
    pub dropout_seed: u64,
    pub same_dialogue_exclusion: bool,
    pub keep_partial_batches: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 15,
            lr_head: 3e-4,
            lr_backbone: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            shuffle_seed: 0,
            init_seed: 0,
            dropout_seed: 0,
            same_dialogue_exclusion: false,
            keep_partial_batches: true,
        }
    }
}

impl TrainConfig {
    /// Batch 1024, 15 epochs, learning rates 3e-4 (head) / 3e-6 (backbone).
    pub fn paper_preset() -> Self {
        TrainConfig {
            batch_size: 1024,
            epochs: 15,
            lr_head: 3e-4,
            lr_backbone: 3e-6,
            ..Default::default()
        }
    }

    /// Set every seed from one base seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.shuffle_seed = rng::derive(seed, &[1]);
        self.init_seed = rng::derive(seed, &[2]);
        self.dropout_seed = rng::derive(seed, &[3]);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(DseError::config("batch_size", "must be >= 2"));
        }
        if self.epochs < 1 {
            return Err(DseError::config("epochs", "must be >= 1"));
        }
        for (field, lr) in [("lr_head", self.lr_head), ("lr_backbone", self.lr_backbone)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(DseError::config(field, format!("must be positive, got {lr}")));
            }
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(DseError::config(field, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(DseError::config("adam_eps", "must be positive"));
        }
        Ok(())
    }
}

/// Split shuffled pair indices into batches of `batch_size`. A trailing batch
/// of one pair is always dropped; other partial batches are kept only when
/// `keep_partial_batches` is set.
///
/// `origins` gives each pair's dialogue (if any) and is only consulted with
/// `same_dialogue_exclusion`.
pub fn make_batches(
    pair_count: usize,
    origins: &[Option<usize>],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if pair_count < 2 {
        return Err(DseError::Invalid(format!(
            "need at least 2 pairs to form a batch, got {pair_count}"
        )));
    }
    if cfg.batch_size < 2 {
        return Err(DseError::config("batch_size", "must be >= 2"));
    }
    let mut order: Vec<usize> = (0..pair_count).collect();
    let mut rng = rng::rng_from(cfg.shuffle_seed, &[0xBA7C, epoch as u64]);
    order.shuffle(&mut rng);

    let m = cfg.batch_size;
    let mut batches: Vec<Vec<usize>> = if cfg.same_dialogue_exclusion {
        assign_excluding_dialogues(&order, origins, m)
    } else {
        order.chunks(m).map(<[usize]>::to_vec).collect()
    };
    if let Some(last) = batches.last() {
        if last.len() < 2 || (!cfg.keep_partial_batches && last.len() < m) {
            batches.pop();
        }
    }
    Ok(batches)
}

/// First-fit placement of each pair into the first batch with room and no
/// pair from the same dialogue; falls back to the first batch with room.
fn assign_excluding_dialogues(order: &[usize], origins: &[Option<usize>], m: usize) -> Vec<Vec<usize>> {
    let n = order.len();
    let count = n.div_ceil(m);
    let capacity = |b: usize| if b + 1 < count { m } else { n - m * (count - 1) };
    let mut batches: Vec<Vec<usize>> = vec![Vec::new(); count];
    let mut members: Vec<std::collections::HashSet<usize>> = vec![Default::default(); count];
    for &p in order {
        let origin = origins.get(p).copied().flatten();
        let open = |b: &usize| batches[*b].len() < capacity(*b);
        let slot = (0..count)
            .filter(open)
            .find(|&b| origin.is_none_or(|o| !members[b].contains(&o)))
            .or_else(|| (0..count).find(open))
            .expect("total capacity equals pair count");
        batches[slot].push(p);
        if let Some(o) = origin {
            members[slot].insert(o);
        }
    }
    batches
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(cfg: &EncoderConfig) -> Self {
        AdamState {
            m: ParamSet::zeros(cfg),
            v: ParamSet::zeros(cfg),
            t: 0,
        }
    }
}

/// One Adam update of a single coordinate at step `t` (1-based). Returns the
/// new `(param, m, v)`.
#[inline]
pub fn adam_update(param: f64, m: f64, v: f64, g: f64, t: u64, lr: f64, cfg: &TrainConfig) -> (f64, f64, f64) {
    AdamCoeffs::new(cfg, t, lr).apply(param, m, v, g)
}

/// Step-dependent constants of one Adam update.
#[derive(Clone, Copy)]
struct AdamCoeffs {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
}

impl AdamCoeffs {
    fn new(cfg: &TrainConfig, t: u64, lr: f64) -> Self {
        AdamCoeffs {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            lr,
            bc1: 1.0 - cfg.beta1.powi(t as i32),
            bc2: 1.0 - cfg.beta2.powi(t as i32),
        }
    }

    #[inline]
    fn apply(&self, param: f64, m: f64, v: f64, g: f64) -> (f64, f64, f64) {
        let m = self.beta1 * m + (1.0 - self.beta1) * g;
        let v = self.beta2 * v + (1.0 - self.beta2) * g * g;
        let m_hat = m / self.bc1;
        let v_hat = v / self.bc2;
        (param - self.lr * m_hat / (v_hat.sqrt() + self.eps), m, v)
    }

    fn run<T: Scalar>(&self, p: &mut [T], m: &mut [T], v: &mut [T], g: &[f64]) {
        p.par_iter_mut()
            .zip(m.par_iter_mut())
            .zip(v.par_iter_mut())
            .zip(g.par_iter())
            .with_min_len(4096)
            .for_each(|(((p, m), v), &g)| {
                let (np, nm, nv) = self.apply(p.to_f64(), m.to_f64(), v.to_f64(), g);
                *p = T::from_f64(np);
                *m = T::from_f64(nm);
                *v = T::from_f64(nv);
            });
    }
}

fn check_step<T: Scalar>(model: &EncoderModel<T>, grads: &GradientSet, state: &AdamState<T>) -> Result<()> {
    if !grads.same_shape(&model.params) || !state.m.same_shape(&model.params) || !state.v.same_shape(&model.params) {
        return Err(DseError::Shape("gradients or optimizer state do not match the model".into()));
    }
    Ok(())
}

fn check_finite(name: &'static str, g: &[f64]) -> Result<()> {
    if g.iter().any(|x| !x.is_finite()) {
        return Err(DseError::NonFiniteGradient(name));
    }
    Ok(())
}

/// The embedding table uses `lr_backbone`; every head parameter uses `lr_head`.
pub fn adam_step<T: Scalar>(
    model: &mut EncoderModel<T>,
    grads: &GradientSet,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    check_step(model, grads, state)?;
    for (name, g) in grads.groups() {
        check_finite(name, g)?;
    }
    state.t += 1;
    let t = state.t;
    let params = model.params.groups_mut();
    let ms = state.m.groups_mut();
    let vs = state.v.groups_mut();
    for ((((name, p), (_, m)), (_, v)), (_, g)) in params.into_iter().zip(ms).zip(vs).zip(grads.groups()) {
        let lr = if name == "E" { cfg.lr_backbone } else { cfg.lr_head };
        AdamCoeffs::new(cfg, t, lr).run(p, m, v, g);
    }
    Ok(())
}

/// Same result as [`adam_step`] when every embedding row outside `rows` has
/// zero gradient and zero moments: such rows are fixed points of the update,
/// so only `rows` of the table are visited. `rows` must be sorted and unique.
pub fn adam_step_rows<T: Scalar>(
    model: &mut EncoderModel<T>,
    grads: &GradientSet,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
    rows: &[usize],
) -> Result<()> {
    check_step(model, grads, state)?;
    let d = model.config.embed_dim;
    if rows.windows(2).any(|w| w[0] >= w[1]) || rows.last().is_some_and(|&r| r >= model.config.vocab_size) {
        return Err(DseError::Invalid("active rows must be sorted, unique and in range".into()));
    }
    for &r in rows {
        check_finite("E", &grads.embedding[r * d..(r + 1) * d])?;
    }
    for (name, g) in grads.groups().into_iter().skip(1) {
        check_finite(name, g)?;
    }
    state.t += 1;
    let t = state.t;
    let emb = AdamCoeffs::new(cfg, t, cfg.lr_backbone);
    let p = &mut model.params.embedding;
    let (m, v) = (&mut state.m.embedding, &mut state.v.embedding);
    for &r in rows {
        let span = r * d..(r + 1) * d;
        for i in span {
            let (np, nm, nv) = emb.apply(p[i].to_f64(), m[i].to_f64(), v[i].to_f64(), grads.embedding[i]);
            p[i] = T::from_f64(np);
            m[i] = T::from_f64(nm);
            v[i] = T::from_f64(nv);
        }
    }
    let head = AdamCoeffs::new(cfg, t, cfg.lr_head);
    let params = model.params.groups_mut();
    let ms = state.m.groups_mut();
    let vs = state.v.groups_mut();
    for ((((_, p), (_, m)), (_, v)), (_, g)) in params.into_iter().zip(ms).zip(vs).zip(grads.groups()).skip(1) {
        head.run(p, m, v, g);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochStats>,
    /// Loss of the very first optimizer step, before any update.
    pub initial_loss: f64,
}

fn tokenize_pairs(pairs: &[TrainPair], model: &EncoderModel<f32>) -> Result<(Vec<TokenSeq>, Vec<TokenSeq>)> {
    let mut q = Vec::with_capacity(pairs.len());
    let mut r = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let (tq, tr) = (model.tokenize(&p.query), model.tokenize(&p.response));
        if tq.ids.is_empty() || tr.ids.is_empty() {
            return Err(DseError::Invalid(format!("pair {i} has an empty side")));
        }
        q.push(tq);
        r.push(tr);
    }
    Ok((q, r))
}

/// Train from a fresh model. `on_epoch` runs after the last step of every
/// epoch with the checkpoint as of that moment.
pub fn train<F>(
    pairs: &[TrainPair],
    encoder_cfg: &EncoderConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&Checkpoint, &EpochStats) -> Result<()>,
{
    encoder_cfg.validate()?;
    loss_cfg.validate()?;
    train_cfg.validate()?;
    if pairs.len() < 2 {
        return Err(DseError::Invalid(format!("need at least 2 pairs, got {}", pairs.len())));
    }
    let mut model = EncoderModel::<f32>::init(encoder_cfg.clone(), train_cfg.init_seed)?;
    let mut adam = AdamState::new(encoder_cfg);
    let (queries, responses) = tokenize_pairs(pairs, &model)?;
    let origins: Vec<Option<usize>> = pairs.iter().map(|p| p.origin).collect();

    let d = encoder_cfg.embed_dim;
    let mut grads = GradientSet::zeros(encoder_cfg);
    let mut active = vec![false; encoder_cfg.vocab_size];
    let mut active_rows: Vec<usize> = Vec::new();
    let mut initial_loss = None;
    let mut stats = Vec::with_capacity(train_cfg.epochs);
    let mut checkpoint = None;
    for epoch in 0..train_cfg.epochs {
        let batches = make_batches(pairs.len(), &origins, train_cfg, epoch)?;
        let mut loss_sum = 0.0;
        for (step, batch) in batches.iter().enumerate() {
            let q: Vec<TokenSeq> = batch.iter().map(|&i| queries[i].clone()).collect();
            let r: Vec<TokenSeq> = batch.iter().map(|&i| responses[i].clone()).collect();
            let step_seed = rng::derive(train_cfg.dropout_seed, &[epoch as u64, step as u64]);
            let (q_out, q_tape) = model.forward(&q, ForwardMode::TrainStochastic, rng::derive(step_seed, &[0]))?;
            let (r_out, r_tape) = model.forward(&r, ForwardMode::TrainStochastic, rng::derive(step_seed, &[1]))?;
            let mut fresh = false;
            for &id in q.iter().chain(&r).flat_map(|s| &s.ids) {
                if !std::mem::replace(&mut active[id as usize], true) {
                    active_rows.push(id as usize);
                    fresh = true;
                }
            }
            if fresh {
                active_rows.sort_unstable();
            }
            let loss = batch_loss_and_grad_into(&model, &q_out, &q_tape, &r_out, &r_tape, loss_cfg, &mut grads)?;
            initial_loss.get_or_insert(loss);
            loss_sum += loss;
            adam_step_rows(&mut model, &grads, &mut adam, train_cfg, &active_rows)?;
            for &id in q.iter().chain(&r).flat_map(|s| &s.ids) {
                let id = id as usize;
                grads.embedding[id * d..(id + 1) * d].iter_mut().for_each(|x| *x = 0.0);
            }
            for (_, g) in grads.groups_mut().into_iter().skip(1) {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let epoch_stats = EpochStats {
            epoch: epoch + 1,
            steps: batches.len(),
            mean_loss: loss_sum / batches.len() as f64,
        };
        let ckpt = Checkpoint {
            model: model.clone(),
            adam: adam.clone(),
            epoch: epoch + 1,
            train_config: train_cfg.clone(),
            loss_config: loss_cfg.clone(),
        };
        on_epoch(&ckpt, &epoch_stats)?;
        stats.push(epoch_stats);
        checkpoint = Some(ckpt);
    }
    Ok(TrainOutcome {
        checkpoint: checkpoint.expect("epochs >= 1"),
        epochs: stats,
        initial_loss: initial_loss.expect("at least one step"),
    })
}
