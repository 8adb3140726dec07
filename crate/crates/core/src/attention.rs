//! Single-head attention: softmax, relaxed linear and momentum variants.
//!
//! Inputs follow the column convention: a context is a `d x T` matrix whose
//! columns are token representations, and projections are `d' x d`.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::tensor::{axpy, matmul, softmax, Matrix, Real, Vector};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams<T> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
}

impl<T: Real> HeadParams<T> {
    pub fn new(w_q: Matrix<T>, w_k: Matrix<T>, w_v: Matrix<T>) -> Result<Self> {
        if w_q.shape() != w_k.shape() || w_q.shape() != w_v.shape() {
            return Err(shape_err(format!(
                "head projections {:?}, {:?}, {:?} differ",
                w_q.shape(),
                w_k.shape(),
                w_v.shape()
            )));
        }
        Ok(Self { w_q, w_k, w_v })
    }

    /// `d'`
    pub fn head_dim(&self) -> usize {
        self.w_q.rows()
    }

    /// `d`
    pub fn input_dim(&self) -> usize {
        self.w_q.cols()
    }

    pub fn cast<U: Real>(&self) -> HeadParams<U> {
        HeadParams { w_q: self.w_q.cast(), w_k: self.w_k.cast(), w_v: self.w_v.cast() }
    }

    fn check_context(&self, context: &Matrix<T>, what: &str) -> Result<()> {
        if context.cols() > 0 && context.rows() != self.input_dim() {
            return Err(shape_err(format!(
                "{what} has {} rows, projections expect {}",
                context.rows(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_query(&self, q: &Vector<T>) -> Result<()> {
        if q.dim() != self.head_dim() {
            return Err(shape_err(format!("query of dim {} for head dim {}", q.dim(), self.head_dim())));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttentionVariant {
    Standard,
    RelaxedLinear,
    Momentum { eta: f64 },
}

impl AttentionVariant {
    pub fn momentum(eta: f64) -> Result<Self> {
        validate_eta(eta)?;
        Ok(AttentionVariant::Momentum { eta })
    }

    pub fn eta(&self) -> Option<f64> {
        match self {
            AttentionVariant::Momentum { eta } => Some(*eta),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AttentionVariant::Momentum { eta } => validate_eta(*eta),
            _ => Ok(()),
        }
    }
}

pub fn validate_eta(eta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eta) {
        return Err(config_err(format!("momentum eta {eta} outside [0, 1)")));
    }
    Ok(())
}

/// `V (Kᵀ q)`: values and keys are `d' x n` with one column per token.
pub fn linear_attn<T: Real>(values: &Matrix<T>, keys: &Matrix<T>, q: &Vector<T>) -> Result<Vector<T>> {
    if values.cols() != keys.cols() {
        return Err(shape_err(format!("{} values for {} keys", values.cols(), keys.cols())));
    }
    if keys.cols() == 0 {
        return Ok(Vector::zeros(values.rows()));
    }
    let scores = keys.matvec_t(q)?;
    values.matvec(&scores)
}

/// Softmax attention of one query over all columns of `context`, scaled by
/// `√d` with `d` the input (model) dimension.
pub fn standard_attention<T: Real>(
    params: &HeadParams<T>,
    context: &Matrix<T>,
    q: &Vector<T>,
) -> Result<Vector<T>> {
    let scale = T::from_f64((params.input_dim() as f64).sqrt());
    standard_attention_scaled(params, context, q, scale)
}

/// As [`standard_attention`] with an explicit score divisor.
pub fn standard_attention_scaled<T: Real>(
    params: &HeadParams<T>,
    context: &Matrix<T>,
    q: &Vector<T>,
    scale: T,
) -> Result<Vector<T>> {
    if context.cols() == 0 {
        return Err(Error::EmptyContext);
    }
    params.check_context(context, "context")?;
    params.check_query(q)?;
    let keys = matmul(&params.w_k, context)?;
    let values = matmul(&params.w_v, context)?;
    let scores = keys.matvec_t(q)?.scale(T::one() / scale);
    values.matvec(&softmax(&scores))
}

/// `W_V X (W_K X)ᵀ q + W_V X' (W_K X')ᵀ q`, with either block allowed empty.
pub fn relaxed_linear_attention<T: Real>(
    params: &HeadParams<T>,
    demos: &Matrix<T>,
    queries: &Matrix<T>,
    q: &Vector<T>,
) -> Result<Vector<T>> {
    params.check_context(demos, "demonstration block")?;
    params.check_context(queries, "query block")?;
    params.check_query(q)?;
    let block = |x: &Matrix<T>| -> Result<Vector<T>> {
        if x.cols() == 0 {
            return Ok(Vector::zeros(params.head_dim()));
        }
        linear_attn(&matmul(&params.w_v, x)?, &matmul(&params.w_k, x)?, q)
    };
    block(queries)?.add(&block(demos)?)
}

/// `Σ_{i=1}^{t-1} η^{t-i} v_i` for the columns `v_1 … v_{t-1}` of `values`,
/// evaluated as a direct sum.
pub fn ema<T: Real>(values: &Matrix<T>, eta: f64) -> Result<Vector<T>> {
    validate_eta(eta)?;
    let t = values.cols() + 1;
    let mut out = vec![T::zero(); values.rows()];
    for i in 1..t {
        let weight = T::from_f64(eta.powi((t - i) as i32));
        for (r, o) in out.iter_mut().enumerate() {
            *o += weight * values.get(r, i - 1);
        }
    }
    Ok(Vector::new(out))
}

/// Incremental EMA: after pushing `v_1 … v_{t-1}` the state holds the same
/// sum as [`ema`], via `s_{t+1} = η (s_t + v_t)`.
#[derive(Clone, Debug)]
pub struct EmaState<T> {
    eta: T,
    sum: Vec<T>,
}

impl<T: Real> EmaState<T> {
    pub fn new(dim: usize, eta: f64) -> Result<Self> {
        validate_eta(eta)?;
        Ok(Self { eta: T::from_f64(eta), sum: vec![T::zero(); dim] })
    }

    pub fn current(&self) -> &[T] {
        &self.sum
    }

    pub fn push(&mut self, v: &[T]) {
        for (s, &x) in self.sum.iter_mut().zip(v) {
            *s = self.eta * (*s + x);
        }
    }
}

/// Softmax attention over positions `1..=t` (all columns of `context`) plus
/// the EMA of the value vectors of positions `1..t-1`.
pub fn momentum_attention<T: Real>(
    params: &HeadParams<T>,
    context: &Matrix<T>,
    q_t: &Vector<T>,
    eta: f64,
) -> Result<Vector<T>> {
    validate_eta(eta)?;
    let mut out = standard_attention(params, context, q_t)?;
    let prior: Vec<usize> = (0..context.cols() - 1).collect();
    let values = matmul(&params.w_v, &context.select_columns(&prior)?)?;
    let momentum = ema(&values, eta)?;
    axpy(out.as_mut_slice(), T::one(), momentum.as_slice());
    Ok(out)
}
