//! Embedding-bag encoder with a two-layer contrastive head.
//!
//! ```text
//! tokens -> E lookup -> mean pool -> dropout -> W1,b1 -> tanh -> dropout -> W2,b2
//!                          |
//!                          +-- EVAL view (no head, no dropout)
//! ```
//!
//! Parameters are stored as `T` (`f32` by default, `f64` for gradient checks);
//! every activation and gradient is computed in `f64`.

use std::fmt::Debug;

use rand::Rng;
use rayon::prelude::*;

use crate::corpus::{tokenize, TokenSeq, DEFAULT_VOCAB_SIZE, MIN_VOCAB_SIZE};
use crate::error::{DseError, Result};
use crate::rng;

/// Storage type for model parameters.
pub trait Scalar: Copy + Debug + PartialEq + Default + Send + Sync + 'static {
    const BYTES: usize;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    const BYTES: usize = 4;
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub head_hidden: usize,
    pub head_out: usize,
    pub dropout_rate: f64,
    pub hash_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: DEFAULT_VOCAB_SIZE,
            embed_dim: 64,
            head_hidden: 64,
            head_out: 32,
            dropout_rate: 0.1,
            hash_seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Total number of scalar parameters, `None` on overflow.
    pub fn param_count(&self) -> Option<usize> {
        let (v, d, h, o) = (self.vocab_size, self.embed_dim, self.head_hidden, self.head_out);
        v.checked_mul(d)?
            .checked_add(d.checked_mul(h)?)?
            .checked_add(h)?
            .checked_add(h.checked_mul(o)?)?
            .checked_add(o)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < MIN_VOCAB_SIZE {
            return Err(DseError::config(
                "vocab_size",
                format!("must be >= {MIN_VOCAB_SIZE}, got {}", self.vocab_size),
            ));
        }
        for (field, v) in [
            ("embed_dim", self.embed_dim),
            ("head_hidden", self.head_hidden),
            ("head_out", self.head_out),
        ] {
            if v == 0 {
                return Err(DseError::config(field, "must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(DseError::config(
                "dropout_rate",
                format!("must lie in [0, 1), got {}", self.dropout_rate),
            ));
        }
        Ok(())
    }
}

/// One array per parameter group, in the fixed order E, W1, b1, W2, b2.
/// Used for parameters, gradients and optimizer moments alike.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    /// vocab_size x embed_dim, row-major.
    pub embedding: Vec<T>,
    /// embed_dim x head_hidden, row-major.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    /// head_hidden x head_out, row-major.
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

pub const GROUP_NAMES: [&str; 5] = ["E", "W1", "b1", "W2", "b2"];

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        ParamSet {
            embedding: vec![T::default(); cfg.vocab_size * cfg.embed_dim],
            w1: vec![T::default(); cfg.embed_dim * cfg.head_hidden],
            b1: vec![T::default(); cfg.head_hidden],
            w2: vec![T::default(); cfg.head_hidden * cfg.head_out],
            b2: vec![T::default(); cfg.head_out],
        }
    }

    pub fn groups(&self) -> [(&'static str, &[T]); 5] {
        [
            ("E", &self.embedding),
            ("W1", &self.w1),
            ("b1", &self.b1),
            ("W2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut [T]); 5] {
        [
            ("E", &mut self.embedding),
            ("W1", &mut self.w1),
            ("b1", &mut self.b1),
            ("W2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }

    pub fn len(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape<U: Scalar>(&self, other: &ParamSet<U>) -> bool {
        self.groups()
            .iter()
            .zip(other.groups().iter())
            .all(|((_, a), (_, b))| a.len() == b.len())
    }

    pub fn convert<U: Scalar>(&self) -> ParamSet<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64(x.to_f64())).collect();
        ParamSet {
            embedding: c(&self.embedding),
            w1: c(&self.w1),
            b1: c(&self.b1),
            w2: c(&self.w2),
            b2: c(&self.b2),
        }
    }
}

pub type GradientSet = ParamSet<f64>;

impl GradientSet {
    pub fn add_assign(&mut self, other: &GradientSet) {
        for ((_, a), (_, b)) in self.groups_mut().into_iter().zip(other.groups()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.groups()
            .iter()
            .flat_map(|(_, g)| g.iter())
            .fold(0.0, |m, &x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel<T = f32> {
    pub config: EncoderConfig,
    pub params: ParamSet<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    TrainStochastic,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    /// Mean-pooled backbone output, used for every downstream evaluation.
    Eval,
    /// Contrastive-head output, used only by the training loss.
    Train,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub view: View,
}

impl EmbeddingBatch {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>, view: View) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(DseError::Shape(format!(
                "{} values for a {rows}x{dim} batch",
                data.len()
            )));
        }
        Ok(EmbeddingBatch {
            rows,
            dim,
            data,
            view,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], view: View) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(DseError::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat(), view)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1)).take(self.rows)
    }

    /// Stack `self` on top of `other`.
    pub fn concat(&self, other: &EmbeddingBatch) -> Result<EmbeddingBatch> {
        if self.dim != other.dim || self.view != other.view {
            return Err(DseError::Shape("cannot concatenate batches of different dim/view".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::new(self.rows + other.rows, self.dim, data, self.view)
    }
}

/// Everything a TRAIN-view forward computed, for exact backprop and replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTape {
    pub token_ids: Vec<Vec<u32>>,
    /// Pooled vectors before dropout, n x embed_dim.
    pub pooled: Vec<f64>,
    /// Multipliers applied to `pooled`: 0 or 1/(1-p) (all 1 when deterministic).
    pub pooled_mask: Vec<f64>,
    /// tanh activations before dropout, n x head_hidden.
    pub hidden: Vec<f64>,
    pub hidden_mask: Vec<f64>,
}

impl ForwardTape {
    pub fn rows(&self) -> usize {
        self.token_ids.len()
    }
}

impl<T: Scalar> EncoderModel<T> {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases. The
    /// embedding table uses `vocab_size` as its fan-in.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::rng_from(seed, &[0x1417]);
        let mut params = ParamSet::<T>::zeros(&config);
        for (data, fan_in) in [
            (&mut params.embedding, config.vocab_size),
            (&mut params.w1, config.embed_dim),
            (&mut params.w2, config.head_hidden),
        ] {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in data.iter_mut() {
                *x = T::from_f64(rng.gen_range(-bound..=bound));
            }
        }
        Ok(EncoderModel { config, params })
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        tokenize(text, self.config.vocab_size, self.config.hash_seed)
    }

    fn check_tokens(&self, seqs: &[TokenSeq]) -> Result<()> {
        for (i, s) in seqs.iter().enumerate() {
            if s.ids.is_empty() {
                return Err(DseError::EmptyTokens(i));
            }
            if let Some(&bad) = s.ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
                return Err(DseError::Invalid(format!(
                    "token id {bad} out of range for vocab {} at row {i}",
                    self.config.vocab_size
                )));
            }
        }
        Ok(())
    }

    fn pool(&self, ids: &[u32], out: &mut [f64]) {
        let d = self.config.embed_dim;
        out.iter_mut().for_each(|x| *x = 0.0);
        for &id in ids {
            let row = &self.params.embedding[id as usize * d..(id as usize + 1) * d];
            for (o, &e) in out.iter_mut().zip(row) {
                *o += e.to_f64();
            }
        }
        let n = ids.len() as f64;
        out.iter_mut().for_each(|x| *x /= n);
    }

    /// EVAL view: mean-pooled token embeddings, deterministic.
    pub fn embed_eval(&self, seqs: &[TokenSeq]) -> Result<EmbeddingBatch> {
        self.check_tokens(seqs)?;
        let d = self.config.embed_dim;
        let mut data = vec![0.0; seqs.len() * d];
        data.par_chunks_mut(d.max(1))
            .zip(seqs.par_iter())
            .for_each(|(out, s)| self.pool(&s.ids, out));
        EmbeddingBatch::new(seqs.len(), d, data, View::Eval)
    }

    pub fn embed_texts(&self, texts: &[&str]) -> Result<EmbeddingBatch> {
        let seqs: Vec<TokenSeq> = texts.iter().map(|t| self.tokenize(t)).collect();
        self.embed_eval(&seqs)
    }

    fn draw_masks(&self, n: usize, mode: ForwardMode, rng_seed: u64) -> (Vec<f64>, Vec<f64>) {
        let (d, h) = (self.config.embed_dim, self.config.head_hidden);
        match mode {
            ForwardMode::Deterministic => (vec![1.0; n * d], vec![1.0; n * h]),
            ForwardMode::TrainStochastic => {
                let p = self.config.dropout_rate;
                let keep = 1.0 / (1.0 - p);
                let mut rng = rng::rng_from(rng_seed, &[0xD20F]);
                let mut pooled = Vec::with_capacity(n * d);
                let mut hidden = Vec::with_capacity(n * h);
                for _ in 0..n {
                    for _ in 0..d {
                        pooled.push(if rng.gen::<f64>() < p { 0.0 } else { keep });
                    }
                    for _ in 0..h {
                        hidden.push(if rng.gen::<f64>() < p { 0.0 } else { keep });
                    }
                }
                (pooled, hidden)
            }
        }
    }

    /// TRAIN view forward. Dropout masks are independent per example and are
    /// fully determined by `rng_seed`.
    pub fn forward(
        &self,
        seqs: &[TokenSeq],
        mode: ForwardMode,
        rng_seed: u64,
    ) -> Result<(EmbeddingBatch, ForwardTape)> {
        self.check_tokens(seqs)?;
        let n = seqs.len();
        let d = self.config.embed_dim;
        let mut pooled = vec![0.0; n * d];
        pooled
            .par_chunks_mut(d)
            .zip(seqs.par_iter())
            .for_each(|(out, s)| self.pool(&s.ids, out));
        let (pooled_mask, hidden_mask) = self.draw_masks(n, mode, rng_seed);
        let mut tape = ForwardTape {
            token_ids: seqs.iter().map(|s| s.ids.clone()).collect(),
            pooled,
            pooled_mask,
            hidden: Vec::new(),
            hidden_mask,
        };
        let (out, hidden) = self.head_forward(&tape)?;
        tape.hidden = hidden;
        Ok((out, tape))
    }

    /// Recompute the TRAIN-view output from a tape (pooled vectors and masks
    /// as recorded).
    pub fn replay(&self, tape: &ForwardTape) -> Result<EmbeddingBatch> {
        self.head_forward(tape).map(|(out, _)| out)
    }

    fn head_forward(&self, tape: &ForwardTape) -> Result<(EmbeddingBatch, Vec<f64>)> {
        let cfg = &self.config;
        let (d, h, o) = (cfg.embed_dim, cfg.head_hidden, cfg.head_out);
        let n = tape.rows();
        if tape.pooled.len() != n * d || tape.pooled_mask.len() != n * d || tape.hidden_mask.len() != n * h {
            return Err(DseError::Shape("tape does not match model dimensions".into()));
        }
        let w1: Vec<f64> = self.params.w1.iter().map(|x| x.to_f64()).collect();
        let b1: Vec<f64> = self.params.b1.iter().map(|x| x.to_f64()).collect();
        let w2: Vec<f64> = self.params.w2.iter().map(|x| x.to_f64()).collect();
        let b2: Vec<f64> = self.params.b2.iter().map(|x| x.to_f64()).collect();

        let mut hidden = vec![0.0; n * h];
        let mut out = vec![0.0; n * o];
        hidden
            .par_chunks_mut(h)
            .zip(out.par_chunks_mut(o))
            .enumerate()
            .for_each(|(r, (hid, y))| {
                let x = &tape.pooled[r * d..(r + 1) * d];
                let xm = &tape.pooled_mask[r * d..(r + 1) * d];
                hid.copy_from_slice(&b1);
                for i in 0..d {
                    let xi = x[i] * xm[i];
                    if xi != 0.0 {
                        let wrow = &w1[i * h..(i + 1) * h];
                        for (a, &w) in hid.iter_mut().zip(wrow) {
                            *a += xi * w;
                        }
                    }
                }
                hid.iter_mut().for_each(|a| *a = a.tanh());
                let hm = &tape.hidden_mask[r * h..(r + 1) * h];
                y.copy_from_slice(&b2);
                for j in 0..h {
                    let hj = hid[j] * hm[j];
                    if hj != 0.0 {
                        let wrow = &w2[j * o..(j + 1) * o];
                        for (a, &w) in y.iter_mut().zip(wrow) {
                            *a += hj * w;
                        }
                    }
                }
            });
        Ok((EmbeddingBatch::new(n, o, out, View::Train)?, hidden))
    }

    /// Exact gradients of a scalar objective given its gradient with respect
    /// to the TRAIN-view outputs recorded in `tape`.
    pub fn backward(&self, tape: &ForwardTape, grad_out: &[f64]) -> Result<GradientSet> {
        let mut grads = GradientSet::zeros(&self.config);
        self.backward_into(tape, grad_out, &mut grads)?;
        Ok(grads)
    }

    /// Like [`backward`](Self::backward) but accumulates into `grads`.
    /// Per-example contributions are summed in row order.
    pub fn backward_into(&self, tape: &ForwardTape, grad_out: &[f64], grads: &mut GradientSet) -> Result<()> {
        let cfg = &self.config;
        let (d, h, o) = (cfg.embed_dim, cfg.head_hidden, cfg.head_out);
        let n = tape.rows();
        if grad_out.len() != n * o {
            return Err(DseError::Shape(format!(
                "upstream gradient has {} values, expected {n}x{o}",
                grad_out.len()
            )));
        }
        if tape.hidden.len() != n * h || tape.pooled.len() != n * d {
            return Err(DseError::Shape("tape does not match model dimensions".into()));
        }
        if !grads.same_shape(&self.params) {
            return Err(DseError::Shape("gradient buffer does not match model".into()));
        }
        let w1: Vec<f64> = self.params.w1.iter().map(|x| x.to_f64()).collect();
        let w2: Vec<f64> = self.params.w2.iter().map(|x| x.to_f64()).collect();

        let mut dpre = vec![0.0; h];
        let mut dx = vec![0.0; d];
        for r in 0..n {
            let g = &grad_out[r * o..(r + 1) * o];
            let hid = &tape.hidden[r * h..(r + 1) * h];
            let hm = &tape.hidden_mask[r * h..(r + 1) * h];
            let x = &tape.pooled[r * d..(r + 1) * d];
            let xm = &tape.pooled_mask[r * d..(r + 1) * d];

            for (b, &gk) in grads.b2.iter_mut().zip(g) {
                *b += gk;
            }
            for j in 0..h {
                let hd = hid[j] * hm[j];
                let wrow = &w2[j * o..(j + 1) * o];
                let grow = &mut grads.w2[j * o..(j + 1) * o];
                let mut acc = 0.0;
                for k in 0..o {
                    grow[k] += hd * g[k];
                    acc += wrow[k] * g[k];
                }
                dpre[j] = acc * hm[j] * (1.0 - hid[j] * hid[j]);
            }
            for (b, &v) in grads.b1.iter_mut().zip(&dpre) {
                *b += v;
            }
            for i in 0..d {
                let xd = x[i] * xm[i];
                let wrow = &w1[i * h..(i + 1) * h];
                let grow = &mut grads.w1[i * h..(i + 1) * h];
                let mut acc = 0.0;
                for j in 0..h {
                    grow[j] += xd * dpre[j];
                    acc += wrow[j] * dpre[j];
                }
                dx[i] = acc * xm[i];
            }
            let ids = &tape.token_ids[r];
            let inv = 1.0 / ids.len() as f64;
            for &id in ids {
                let erow = &mut grads.embedding[id as usize * d..(id as usize + 1) * d];
                for (e, &v) in erow.iter_mut().zip(&dx) {
                    *e += v * inv;
                }
            }
        }
        Ok(())
    }
}

/// Anything that maps texts to EVAL-view embeddings.
pub trait Embedder {
    fn embed(&self, texts: &[&str]) -> Result<EmbeddingBatch>;
}

impl<T: Scalar> Embedder for EncoderModel<T> {
    fn embed(&self, texts: &[&str]) -> Result<EmbeddingBatch> {
        self.embed_texts(texts)
    }
}
