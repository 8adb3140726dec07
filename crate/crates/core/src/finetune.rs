//! Restricted finetuning: one epoch over the demonstrations in prompt order,
//! one SGD step per example, touching only key and value projections.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attention::HeadParams;
use crate::error::{config_err, shape_err, Result};
use crate::model::{forward, ModelConfig, ModelParams, TokenSequence};
use crate::model::{loss_grads_and_trace, LossPositions};
use crate::tensor::{axpy, matmul, matmul_nt, Matrix, Real};
use crate::Error;

/// Which parameters an optimizer step may touch.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSelector {
    #[default]
    KeyValue,
    All,
    Names(BTreeSet<String>),
}

impl ParamSelector {
    pub fn selects(&self, name: &str) -> bool {
        match self {
            ParamSelector::KeyValue => is_key_value(name),
            ParamSelector::All => true,
            ParamSelector::Names(names) => names.contains(name),
        }
    }
}

fn is_key_value(name: &str) -> bool {
    name.contains(".heads.") && (name.ends_with(".w_k") || name.ends_with(".w_v"))
}

/// When training-token queries are recorded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryRecording {
    /// During each example's own forward pass, before its update.
    #[default]
    Sequential,
    /// All examples at the initial parameters.
    BeforeAnyUpdate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSpec {
    pub learning_rate: f64,
    pub mask: ParamSelector,
    pub loss_positions: LossPositions,
    pub query_recording: QueryRecording,
}

impl FinetuneSpec {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            mask: ParamSelector::KeyValue,
            loss_positions: LossPositions::All,
            query_recording: QueryRecording::Sequential,
        }
    }

    /// The mask must select exactly the key/value projections of `params`.
    /// A zero learning rate is accepted as the null step.
    pub fn validate<T: Real>(&self, params: &ModelParams<T>) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(config_err(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        for name in params.names() {
            if self.mask.selects(&name) != is_key_value(&name) {
                return Err(config_err(format!(
                    "trainable mask must cover exactly the key/value projections (disagrees on {name})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneResult<T> {
    pub params: ModelParams<T>,
    /// `[layer][head]`
    pub delta_w_k: Vec<Vec<Matrix<T>>>,
    pub delta_w_v: Vec<Vec<Matrix<T>>>,
    /// `Q'^(l,h)`: one column per demonstration token, in demonstration order
    /// (`d_head x N`).
    pub train_queries: Vec<Vec<Matrix<T>>>,
    /// Training loss of each step, before that step's update.
    pub losses: Vec<f64>,
}

impl<T: Real> FinetuneResult<T> {
    pub fn n_train_tokens(&self) -> usize {
        self.train_queries.first().and_then(|l| l.first()).map_or(0, |q| q.cols())
    }

    /// Frobenius norms of `(ΔW_K, ΔW_V)` per layer, summed over heads in quadrature.
    pub fn per_layer_delta_norms(&self) -> Vec<(f64, f64)> {
        let norm = |ms: &[Matrix<T>]| ms.iter().map(|m| m.frobenius_norm().as_f64().powi(2)).sum::<f64>().sqrt();
        self.delta_w_k.iter().zip(&self.delta_w_v).map(|(k, v)| (norm(k), norm(v))).collect()
    }
}

/// Positions of the demonstration's own tokens (separators excluded).
fn example_positions(seq: &TokenSequence) -> Vec<usize> {
    if seq.spans.is_empty() {
        (0..seq.len()).collect()
    } else {
        seq.demo_token_positions()
    }
}

fn append_queries<T: Real>(store: &mut [Vec<Vec<T>>], queries: &[Vec<Matrix<T>>], positions: &[usize]) {
    for (layer_store, layer_q) in store.iter_mut().zip(queries) {
        for (flat, q) in layer_store.iter_mut().zip(layer_q) {
            for &p in positions {
                flat.extend_from_slice(q.row(p));
            }
        }
    }
}

pub fn finetune_kv<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    demos: &[TokenSequence],
    spec: &FinetuneSpec,
) -> Result<FinetuneResult<T>> {
    spec.validate(params)?;
    let lr = T::from_f64(spec.learning_rate);
    let (n_layers, n_heads) = (config.n_layers, config.n_heads);
    // one token query per row while recording; transposed at the end
    let mut store: Vec<Vec<Vec<T>>> = vec![vec![Vec::new(); n_heads]; n_layers];

    if spec.query_recording == QueryRecording::BeforeAnyUpdate {
        for demo in demos {
            let trace = forward(params, config, demo, true)?.trace.expect("trace requested");
            append_queries(&mut store, &trace.queries, &example_positions(demo));
        }
    }

    let mut current = params.clone();
    let mut losses = Vec::with_capacity(demos.len());
    for (step, demo) in demos.iter().enumerate() {
        let (loss, grads, trace) = loss_grads_and_trace(&current, config, demo, spec.loss_positions)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence { step, loss });
        }
        if spec.query_recording == QueryRecording::Sequential {
            append_queries(&mut store, &trace.queries, &example_positions(demo));
        }
        losses.push(loss);
        if spec.learning_rate > 0.0 {
            for (layer, glayer) in current.layers.iter_mut().zip(&grads.layers) {
                for (head, ghead) in layer.heads.iter_mut().zip(&glayer.heads) {
                    axpy(head.w_k.as_mut_slice(), -lr, ghead.w_k.as_slice());
                    axpy(head.w_v.as_mut_slice(), -lr, ghead.w_v.as_slice());
                }
            }
        }
    }

    let d_head = config.d_head;
    let train_queries = store
        .into_iter()
        .map(|layer| {
            layer
                .into_iter()
                .map(|flat| {
                    let n = flat.len() / d_head;
                    Matrix::new(n, d_head, flat).map(|m| m.transpose())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let deltas = |pick: fn(&HeadParams<T>) -> &Matrix<T>| -> Result<Vec<Vec<Matrix<T>>>> {
        current
            .layers
            .iter()
            .zip(&params.layers)
            .map(|(new, old)| new.heads.iter().zip(&old.heads).map(|(a, b)| pick(a).sub(pick(b))).collect())
            .collect()
    };
    Ok(FinetuneResult {
        delta_w_k: deltas(|h| &h.w_k)?,
        delta_w_v: deltas(|h| &h.w_v)?,
        params: current,
        train_queries,
        losses,
    })
}

/// `ΔW_FT = (W_V+ΔW_V) X Xᵀ (W_K+ΔW_K)ᵀ − W_V X Xᵀ W_Kᵀ` for query-token
/// representations `X` (`d x m`, one column per token).
pub fn ft_delta_wzsl<T: Real>(initial: &HeadParams<T>, updated: &HeadParams<T>, queries: &Matrix<T>) -> Result<Matrix<T>> {
    if initial.w_k.shape() != updated.w_k.shape() || initial.w_v.shape() != updated.w_v.shape() {
        return Err(shape_err("initial and updated head shapes differ"));
    }
    if queries.rows() != initial.input_dim() {
        return Err(shape_err(format!("queries have {} rows, heads expect {}", queries.rows(), initial.input_dim())));
    }
    let zsl = |h: &HeadParams<T>| -> Result<Matrix<T>> {
        let vx = matmul(&h.w_v, queries)?;
        let kx = matmul(&h.w_k, queries)?;
        matmul_nt(&vx, &kx)
    };
    zsl(updated)?.sub(&zsl(initial)?)
}
