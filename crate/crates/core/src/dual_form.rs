//! The gradient-descent / linear-attention dual.
//!
//! A linear layer updated by accumulated outer products `ΔW = Σ e_i ⊗ x'_i`
//! answers a query `x` with `W_0 x + Σ e_i (x'_iᵀ x)`, which is linear
//! attention with error signals as values and historic inputs as keys.
//! Relaxed linear attention splits the same way into a zero-shot weight
//! `W_ZSL = W_V X (W_K X)ᵀ` and an update `ΔW_ICL = Σ (W_V x'_i) ⊗ (W_K x'_i)`
//! contributed by demonstration tokens.

use serde::{Deserialize, Serialize};

use crate::attention::{linear_attn, relaxed_linear_attention, HeadParams};
use crate::error::{config_err, shape_err, Result};
use crate::tensor::{axpy, matmul, matmul_nt, Matrix, Precision, Real, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct GdLinearInstance<T> {
    pub w0: Matrix<T>,
    pub historic_inputs: Vec<Vector<T>>,
    /// Output error signals, already multiplied by the negative learning rate.
    pub error_signals: Vec<Vector<T>>,
}

impl<T: Real> GdLinearInstance<T> {
    pub fn new(w0: Matrix<T>, historic_inputs: Vec<Vector<T>>, error_signals: Vec<Vector<T>>) -> Result<Self> {
        if historic_inputs.len() != error_signals.len() {
            return Err(shape_err(format!(
                "{} historic inputs but {} error signals",
                historic_inputs.len(),
                error_signals.len()
            )));
        }
        let (d_out, d_in) = w0.shape();
        if let Some(x) = historic_inputs.iter().find(|x| x.dim() != d_in) {
            return Err(shape_err(format!("historic input of dim {} for d_in = {d_in}", x.dim())));
        }
        if let Some(e) = error_signals.iter().find(|e| e.dim() != d_out) {
            return Err(shape_err(format!("error signal of dim {} for d_out = {d_out}", e.dim())));
        }
        Ok(Self { w0, historic_inputs, error_signals })
    }
}

/// Outcome of comparing two evaluation routes of the same quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub check_name: String,
    pub shape: Vec<usize>,
    pub n_demos: usize,
    pub precision: Precision,
    pub tol: f64,
    pub max_abs_diff: f64,
    pub mean_abs_diff: f64,
    pub pass: bool,
}

impl EquivalenceReport {
    fn compare<T: Real>(
        check_name: &str,
        shape: Vec<usize>,
        n_demos: usize,
        lhs: &Vector<T>,
        rhs: &Vector<T>,
        tol: f64,
    ) -> Result<Self> {
        if lhs.dim() != rhs.dim() {
            return Err(shape_err(format!("{check_name}: sides of dim {} and {}", lhs.dim(), rhs.dim())));
        }
        let diffs: Vec<f64> = lhs
            .as_slice()
            .iter()
            .zip(rhs.as_slice())
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .collect();
        let max_abs_diff = diffs.iter().cloned().fold(0.0, f64::max);
        let mean_abs_diff = if diffs.is_empty() { 0.0 } else { diffs.iter().sum::<f64>() / diffs.len() as f64 };
        let finite = diffs.iter().all(|d| d.is_finite());
        Ok(Self {
            check_name: check_name.to_string(),
            shape,
            n_demos,
            precision: T::PRECISION,
            tol,
            max_abs_diff,
            mean_abs_diff,
            pass: finite && max_abs_diff <= tol,
        })
    }
}

/// `ΔW = Σ_i e_i ⊗ x'_i`, accumulated in one batch. Empty history gives zero.
pub fn gd_update<T: Real>(instance: &GdLinearInstance<T>) -> Matrix<T> {
    let (d_out, d_in) = instance.w0.shape();
    let mut delta = Matrix::zeros(d_out, d_in);
    for (e, x) in instance.error_signals.iter().zip(&instance.historic_inputs) {
        for (r, &er) in e.as_slice().iter().enumerate() {
            axpy(delta.row_mut(r), er, x.as_slice());
        }
    }
    delta
}

/// Compare `(W_0 + ΔW) x` with `W_0 x + Σ e_i (x'_iᵀ x)`.
pub fn gd_dual_check<T: Real>(instance: &GdLinearInstance<T>, x: &Vector<T>, tol: f64) -> Result<EquivalenceReport> {
    let (d_out, d_in) = instance.w0.shape();
    if x.dim() != d_in {
        return Err(shape_err(format!("query of dim {} for d_in = {d_in}", x.dim())));
    }
    let updated = instance.w0.add(&gd_update(instance))?;
    let lhs = updated.matvec(x)?;

    let n = instance.historic_inputs.len();
    let base = instance.w0.matvec(x)?;
    let rhs = if n == 0 {
        base
    } else {
        let values = Matrix::from_columns(d_out, &instance.error_signals)?;
        let keys = Matrix::from_columns(d_in, &instance.historic_inputs)?;
        base.add(&linear_attn(&values, &keys, x)?)?
    };
    EquivalenceReport::compare("gd_dual", vec![d_out, d_in], n, &lhs, &rhs, tol)
}

/// `W_ZSL = W_V X (W_K X)ᵀ`, shape `d' x d'`.
pub fn zsl_weight<T: Real>(params: &HeadParams<T>, queries: &Matrix<T>) -> Result<Matrix<T>> {
    if queries.cols() == 0 {
        return Err(config_err("zero-shot weight needs at least one query token"));
    }
    let values = matmul(&params.w_v, queries)?;
    let keys = matmul(&params.w_k, queries)?;
    matmul_nt(&values, &keys)
}

/// Demonstration-side half of the decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct IclUpdate<T> {
    /// `Σ_i (W_V x'_i) ⊗ (W_K x'_i)`
    pub delta_w_icl: Matrix<T>,
    /// `W_V X'`, one column per demonstration token.
    pub meta_gradients: Matrix<T>,
    /// `W_K X'`
    pub keys: Matrix<T>,
}

/// Accumulates the outer product of each demonstration token's value and key.
pub fn icl_update<T: Real>(params: &HeadParams<T>, demos: &Matrix<T>) -> Result<IclUpdate<T>> {
    let d_head = params.head_dim();
    if demos.cols() > 0 && demos.rows() != params.input_dim() {
        return Err(shape_err(format!(
            "demonstrations have {} rows, projections expect {}",
            demos.rows(),
            params.input_dim()
        )));
    }
    let n = demos.cols();
    let (meta_gradients, keys) = if n == 0 {
        (Matrix::zeros(d_head, 0), Matrix::zeros(d_head, 0))
    } else {
        (matmul(&params.w_v, demos)?, matmul(&params.w_k, demos)?)
    };
    let mut delta = Matrix::zeros(d_head, d_head);
    for i in 0..n {
        let v = meta_gradients.column(i);
        let k = keys.column(i);
        for r in 0..d_head {
            axpy(delta.row_mut(r), v[r], k.as_slice());
        }
    }
    Ok(IclUpdate { delta_w_icl: delta, meta_gradients, keys })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualDecomposition<T> {
    pub w_zsl: Matrix<T>,
    pub delta_w_icl: Matrix<T>,
    pub meta_gradients: Matrix<T>,
    pub keys: Matrix<T>,
}

impl<T: Real> DualDecomposition<T> {
    pub fn new(params: &HeadParams<T>, demos: &Matrix<T>, queries: &Matrix<T>) -> Result<Self> {
        let w_zsl = zsl_weight(params, queries)?;
        let IclUpdate { delta_w_icl, meta_gradients, keys } = icl_update(params, demos)?;
        Ok(Self { w_zsl, delta_w_icl, meta_gradients, keys })
    }

    /// `(W_ZSL + ΔW_ICL) q`
    pub fn apply(&self, q: &Vector<T>) -> Result<Vector<T>> {
        self.w_zsl.add(&self.delta_w_icl)?.matvec(q)
    }

    /// `W_ZSL q + LinearAttn(W_V X', W_K X', q)`
    pub fn apply_as_linear_attention(&self, q: &Vector<T>) -> Result<Vector<T>> {
        self.w_zsl.matvec(q)?.add(&linear_attn(&self.meta_gradients, &self.keys, q)?)
    }
}

/// Compare relaxed linear attention over `[X'; X]` against
/// `(W_ZSL + ΔW_ICL) q`.
pub fn attention_dual_check<T: Real>(
    params: &HeadParams<T>,
    demos: &Matrix<T>,
    queries: &Matrix<T>,
    q: &Vector<T>,
    tol: f64,
) -> Result<EquivalenceReport> {
    let lhs = relaxed_linear_attention(params, demos, queries, q)?;
    let rhs = DualDecomposition::new(params, demos, queries)?.apply(q)?;
    EquivalenceReport::compare(
        "attention_dual",
        vec![params.input_dim(), params.head_dim(), queries.cols()],
        demos.cols(),
        &lhs,
        &rhs,
        tol,
    )
}
