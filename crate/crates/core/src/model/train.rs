use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{loss_and_grads, sequence_loss, LossPositions};
use super::{ModelConfig, ModelParams, TokenSequence};
use crate::error::{config_err, Result};
use crate::rng::child_rng;
use crate::tensor::Real;
use crate::Error;

/// Training data: either one long token stream sampled in random windows, or
/// a pool of ready-made sequences sampled whole.
#[derive(Clone, Debug, PartialEq)]
pub enum Corpus {
    Stream(Vec<u32>),
    Sequences(Vec<TokenSequence>),
}

impl Corpus {
    pub fn n_tokens(&self) -> usize {
        match self {
            Corpus::Stream(t) => t.len(),
            Corpus::Sequences(s) => s.iter().map(|s| s.len()).sum(),
        }
    }

    fn sample(&self, seq_len: usize, rng: &mut crate::rng::Rng) -> TokenSequence {
        match self {
            Corpus::Stream(tokens) => {
                let start = rng.random_range(0..=tokens.len() - seq_len);
                TokenSequence::from_ids(tokens[start..start + seq_len].to_vec())
            }
            Corpus::Sequences(seqs) => seqs[rng.random_range(0..seqs.len())].clone(),
        }
    }
}

/// Linear warmup to `peak`, then polynomial decay to `end` at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub end: f64,
    pub power: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self { peak: lr, warmup_steps: 0, total_steps: 0, end: lr, power: 1.0 }
    }

    /// Learning rate for 0-based `step`.
    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if self.total_steps <= self.warmup_steps {
            return self.peak;
        }
        let frac = ((step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64).min(1.0);
        self.end + (self.peak - self.end) * (1.0 - frac).powf(self.power)
    }

    fn validate(&self) -> Result<()> {
        if !(self.peak >= 0.0 && self.end >= 0.0 && self.power.is_finite() && self.peak.is_finite()) {
            return Err(config_err(format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    /// Adam with β = (0.9, 0.98) and ε = 1e-6.
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.98, eps: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub steps: usize,
    pub batch_size: usize,
    /// Window length when sampling a [`Corpus::Stream`].
    pub seq_len: usize,
    pub lr: LrSchedule,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub optimizer: Optimizer,
    pub log_every: usize,
    pub loss_positions: LossPositions,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            seq_len: 64,
            lr: LrSchedule { peak: 3e-3, warmup_steps: 50, total_steps: 1000, end: 0.0, power: 1.0 },
            clip_norm: Some(2.0),
            optimizer: Optimizer::adam(),
            log_every: 10,
            loss_positions: LossPositions::All,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    /// Mean training loss over the logging interval ending at `step`.
    pub loss: f64,
    pub lr: f64,
}

pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub curve: Vec<LossPoint>,
}

/// Clip `grads` to `max_norm` in place; returns the pre-clip norm.
pub(crate) fn clip_grads<T: Real>(grads: &mut ModelParams<T>, max_norm: Option<f64>) -> f64 {
    let norm = grads.global_norm();
    if let Some(max) = max_norm {
        if norm > max {
            grads.scale(T::from_f64(max / norm));
        }
    }
    norm
}

pub fn train_lm<T: Real>(
    mut params: ModelParams<T>,
    config: &ModelConfig,
    corpus: &Corpus,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    params.check_shapes(config)?;
    hyper.lr.validate()?;
    if hyper.batch_size == 0 || hyper.log_every == 0 {
        return Err(config_err("batch_size and log_every must be at least 1"));
    }
    match corpus {
        Corpus::Stream(tokens) => {
            if hyper.seq_len < 2 || hyper.seq_len > config.max_seq_len {
                return Err(config_err(format!("seq_len {} outside 2..={}", hyper.seq_len, config.max_seq_len)));
            }
            if tokens.len() < hyper.seq_len {
                return Err(Error::Length(format!(
                    "corpus has {} tokens, fewer than seq_len {}",
                    tokens.len(),
                    hyper.seq_len
                )));
            }
        }
        Corpus::Sequences(seqs) => {
            if seqs.is_empty() {
                return Err(Error::Length("empty sequence corpus".into()));
            }
        }
    }

    let mut rng = child_rng(seed, "train_lm.batches");
    let mut m = ModelParams::<T>::zeros(config);
    let mut v = ModelParams::<T>::zeros(config);
    let mut curve = Vec::new();
    let mut interval = (0.0, 0usize);

    for step in 0..hyper.steps {
        let batch: Vec<TokenSequence> = (0..hyper.batch_size).map(|_| corpus.sample(hyper.seq_len, &mut rng)).collect();
        let (loss, mut grads) = loss_and_grads(&params, config, &batch, hyper.loss_positions)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence { step, loss });
        }
        clip_grads(&mut grads, hyper.clip_norm);
        let lr = hyper.lr.at(step);
        if lr > 0.0 {
            match hyper.optimizer {
                Optimizer::Sgd => params.axpy(T::from_f64(-lr), &grads),
                Optimizer::Adam { beta1, beta2, eps } => {
                    let t = (step + 1) as i32;
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
                    let (c1, c2) = (T::one() - b1, T::one() - b2);
                    let step_size = T::from_f64(lr / bc1);
                    let inv_bc2 = T::from_f64(1.0 / bc2);
                    let eps = T::from_f64(eps);
                    let slots = params.slots_mut().into_iter().zip(grads.slots()).zip(m.slots_mut()).zip(v.slots_mut());
                    for (((p, (_, _, g)), ms), vs) in slots {
                        for i in 0..p.len() {
                            ms[i] = b1 * ms[i] + c1 * g[i];
                            vs[i] = b2 * vs[i] + c2 * g[i] * g[i];
                            p[i] -= step_size * ms[i] / ((vs[i] * inv_bc2).sqrt() + eps);
                        }
                    }
                }
            }
        }
        interval.0 += loss;
        interval.1 += 1;
        if (step + 1) % hyper.log_every == 0 || step + 1 == hyper.steps {
            curve.push(LossPoint { step: step + 1, loss: interval.0 / interval.1 as f64, lr });
            interval = (0.0, 0);
        }
    }
    Ok(TrainOutcome { params, curve })
}

/// `exp` of the mean next-token cross-entropy over consecutive,
/// non-overlapping windows of `eval_len` tokens. A trailing partial window
/// is dropped.
pub fn perplexity<T: Real>(params: &ModelParams<T>, config: &ModelConfig, tokens: &[u32], eval_len: usize) -> Result<f64> {
    if eval_len < 2 || eval_len > config.max_seq_len {
        return Err(Error::Length(format!("eval_len {eval_len} outside 2..={}", config.max_seq_len)));
    }
    if tokens.len() < eval_len {
        return Err(Error::Length(format!("corpus has {} tokens, fewer than eval_len {eval_len}", tokens.len())));
    }
    let parts: Vec<(f64, usize)> = tokens
        .par_chunks_exact(eval_len)
        .map(|w| sequence_loss(params, config, &TokenSequence::from_ids(w.to_vec()), LossPositions::All))
        .collect::<Result<_>>()?;
    // summed in window order so the result does not depend on the thread count
    let (total, count) = parts.iter().fold((0.0, 0usize), |(t, c), (s, n)| (t + s, c + n));
    Ok((total / count as f64).exp())
}
