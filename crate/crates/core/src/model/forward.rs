//! Forward pass, tracing, loss and hand-written backward pass.
//!
//! Internally a sequence is a `T x d_model` matrix with one token per row.
//! Every row is computed from rows at or before it only, which makes the
//! causal invariance bitwise rather than approximate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CapturePoint, ModelConfig, ModelParams, TokenSequence};
use crate::attention::{AttentionVariant, EmaState};
use crate::error::{config_err, Result};
use crate::tensor::{axpy, dot, matmul, matmul_nt, matmul_tn, softmax_in_place, Matrix, Real, Vector};
use crate::Error;

const LN_EPS: f64 = 1e-5;

/// Which next-token predictions enter the LM loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossPositions {
    #[default]
    All,
    /// Only predictions of tokens listed in `TokenSequence::label_positions`.
    LabelsOnly,
}

/// Per-layer record of one forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace<T> {
    /// `h^(l)`: attention output of the last token, at the configured capture point.
    pub attn_out: Vec<Vector<T>>,
    /// `m^(l,h)`: scaled, pre-softmax scores of the last token over all positions.
    pub pre_softmax: Vec<Vec<Vector<T>>>,
    /// `q^(l,h,p)`: attention queries, one row per position (`T x d_head`).
    pub queries: Vec<Vec<Matrix<T>>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn n_layers(&self) -> usize {
        self.attn_out.len()
    }

    pub fn n_heads(&self) -> usize {
        self.pre_softmax.first().map_or(0, |h| h.len())
    }

    pub fn seq_len(&self) -> usize {
        self.pre_softmax.first().and_then(|h| h.first()).map_or(0, |m| m.dim())
    }

    /// Attention query of the last position at `(layer, head)`.
    pub fn last_query(&self, layer: usize, head: usize) -> Vector<T> {
        let q = &self.queries[layer][head];
        Vector::new(q.row(q.rows() - 1).to_vec())
    }
}

pub struct ForwardOutput<T> {
    /// `T x vocab_size`
    pub logits: Matrix<T>,
    pub trace: Option<ForwardTrace<T>>,
}

struct LnCache<T> {
    xhat: Matrix<T>,
    rstd: Vec<T>,
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    u: Matrix<T>,
    q: Vec<Matrix<T>>,
    k: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    /// Row `t` holds attention weights over positions `0..=t` (softmax
    /// probabilities, or raw scores for relaxed linear attention).
    weights: Vec<Matrix<T>>,
    concat: Matrix<T>,
    attn: Matrix<T>,
    x_mid: Matrix<T>,
    ln2: LnCache<T>,
    w: Matrix<T>,
    ff_pre: Matrix<T>,
    ff_act: Matrix<T>,
}

struct Cache<T> {
    ids: Vec<u32>,
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    z: Matrix<T>,
}

fn layer_norm<T: Real>(x: &Matrix<T>, g: &Vector<T>, b: &Vector<T>) -> (Matrix<T>, LnCache<T>) {
    let (rows, d) = x.shape();
    let inv_d = T::from_f64(1.0 / d as f64);
    let eps = T::from_f64(LN_EPS);
    let mut y = Matrix::zeros(rows, d);
    let mut xhat = Matrix::zeros(rows, d);
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for (o, &v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * rs;
        }
        let yr = y.row_mut(r);
        for j in 0..d {
            yr[j] = xh[j] * g[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns `dx`; accumulates into `dg`, `db`.
fn layer_norm_backward<T: Real>(
    dy: &Matrix<T>,
    cache: &LnCache<T>,
    g: &Vector<T>,
    dg: &mut Vector<T>,
    db: &mut Vector<T>,
) -> Matrix<T> {
    let (rows, d) = dy.shape();
    let inv_d = T::from_f64(1.0 / d as f64);
    let mut dx = Matrix::zeros(rows, d);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
        }
        let mean_dxhat = dxhat.iter().copied().sum::<T>() * inv_d;
        let mean_dxhat_xhat = dot(&dxhat, xh) * inv_d;
        let rs = cache.rstd[r];
        let out = dx.row_mut(r);
        for j in 0..d {
            out[j] = rs * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let th = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + three * k * x * x)
}

fn add_bias<T: Real>(m: &mut Matrix<T>, b: &Vector<T>) {
    for r in 0..m.rows() {
        axpy(m.row_mut(r), T::one(), b.as_slice());
    }
}

fn accumulate_rows<T: Real>(dst: &mut Vector<T>, m: &Matrix<T>) {
    for r in 0..m.rows() {
        axpy(dst.as_mut_slice(), T::one(), m.row(r));
    }
}

fn check_params<T: Real>(params: &ModelParams<T>, config: &ModelConfig) -> Result<()> {
    if params.layers.len() != config.n_layers
        || params.tok_emb.shape() != (config.vocab_size, config.d_model)
        || params.pos_emb.shape() != (config.max_seq_len, config.d_model)
    {
        return Err(crate::error::shape_err("parameters do not match the model config"));
    }
    Ok(())
}

fn run<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    ids: &[u32],
    keep_cache: bool,
    want_trace: bool,
) -> Result<(Matrix<T>, Option<Cache<T>>, Option<ForwardTrace<T>>)> {
    check_params(params, config)?;
    TokenSequence::from_ids(ids.to_vec()).check(config.vocab_size, config.max_seq_len)?;
    if ids.is_empty() {
        return Err(Error::Length("empty token sequence".into()));
    }
    let t_len = ids.len();
    let d = config.d_model;
    let dh = config.d_head;
    let scale_inv = T::from_f64(1.0 / config.score_scale());
    let eta = config.attention.eta().unwrap_or(0.0);
    let use_softmax = !matches!(config.attention, AttentionVariant::RelaxedLinear);

    let mut x = Matrix::from_fn(t_len, d, |t, j| params.tok_emb.get(ids[t] as usize, j) + params.pos_emb.get(t, j));

    let mut layer_caches = Vec::new();
    let mut trace = want_trace.then(|| ForwardTrace {
        attn_out: Vec::new(),
        pre_softmax: Vec::new(),
        queries: Vec::new(),
    });

    for layer in &params.layers {
        let (u, ln1) = layer_norm(&x, &layer.ln1_g, &layer.ln1_b);
        let mut concat = Matrix::zeros(t_len, config.attention_width());
        let mut qs = Vec::with_capacity(config.n_heads);
        let mut ks = Vec::with_capacity(config.n_heads);
        let mut vs = Vec::with_capacity(config.n_heads);
        let mut ws = Vec::with_capacity(config.n_heads);
        let mut layer_scores = Vec::with_capacity(config.n_heads);
        for (h, head) in layer.heads.iter().enumerate() {
            let q = matmul_nt(&u, &head.w_q)?;
            let k = matmul_nt(&u, &head.w_k)?;
            let v = matmul_nt(&u, &head.w_v)?;
            let mut weights = Matrix::zeros(t_len, t_len);
            let mut ema = EmaState::<T>::new(dh, eta)?;
            for t in 0..t_len {
                let row = &mut weights.row_mut(t)[..=t];
                let qt = q.row(t);
                for (j, w) in row.iter_mut().enumerate() {
                    *w = dot(qt, k.row(j)) * scale_inv;
                }
                if want_trace && t == t_len - 1 {
                    layer_scores.push(Vector::new(row.to_vec()));
                }
                if use_softmax {
                    softmax_in_place(row);
                }
                let out = &mut concat.row_mut(t)[h * dh..(h + 1) * dh];
                for (j, &w) in row.iter().enumerate() {
                    axpy(out, w, v.row(j));
                }
                if eta > 0.0 {
                    axpy(out, T::one(), ema.current());
                    ema.push(v.row(t));
                }
            }
            qs.push(q);
            ks.push(k);
            vs.push(v);
            ws.push(weights);
        }
        let mut attn = matmul_nt(&concat, &layer.w_o)?;
        add_bias(&mut attn, &layer.b_o);
        let x_mid = x.add(&attn)?;

        if let Some(tr) = trace.as_mut() {
            let captured = match config.capture {
                CapturePoint::PreResidual => attn.row(t_len - 1),
                CapturePoint::PostResidual => x_mid.row(t_len - 1),
            };
            tr.attn_out.push(Vector::new(captured.to_vec()));
            tr.pre_softmax.push(layer_scores);
            tr.queries.push(qs.clone());
        }

        let (w, ln2) = layer_norm(&x_mid, &layer.ln2_g, &layer.ln2_b);
        let mut ff_pre = matmul_nt(&w, &layer.w_ff1)?;
        add_bias(&mut ff_pre, &layer.b_ff1);
        let ff_act = Matrix::from_fn(t_len, config.d_ffn, |r, c| gelu(ff_pre.get(r, c)));
        let mut ff_out = matmul_nt(&ff_act, &layer.w_ff2)?;
        add_bias(&mut ff_out, &layer.b_ff2);
        let x_next = x_mid.add(&ff_out)?;

        if keep_cache {
            layer_caches.push(LayerCache {
                ln1,
                u,
                q: qs,
                k: ks,
                v: vs,
                weights: ws,
                concat,
                attn,
                x_mid,
                ln2,
                w,
                ff_pre,
                ff_act,
            });
        }
        x = x_next;
    }

    let (z, lnf) = layer_norm(&x, &params.lnf_g, &params.lnf_b);
    let logits = matmul_nt(&z, &params.tok_emb)?;
    let cache = keep_cache.then(|| Cache { ids: ids.to_vec(), layers: layer_caches, lnf, z });
    Ok((logits, cache, trace))
}

/// Logits for every position; with `trace` set, also the per-layer record.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    tokens: &TokenSequence,
    trace: bool,
) -> Result<ForwardOutput<T>> {
    let (logits, _, trace) = run(params, config, &tokens.ids, false, trace)?;
    Ok(ForwardOutput { logits, trace })
}

/// Attention sublayer outputs at the configured capture point, for every
/// layer and position (`T x d_model` each).
pub fn forward_layers<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    tokens: &TokenSequence,
) -> Result<Vec<Matrix<T>>> {
    let (_, cache, _) = run(params, config, &tokens.ids, true, false)?;
    let cache = cache.expect("cache requested");
    Ok(cache
        .layers
        .into_iter()
        .map(|l| match config.capture {
            CapturePoint::PreResidual => l.attn,
            CapturePoint::PostResidual => l.x_mid,
        })
        .collect())
}

fn backward<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    cache: &Cache<T>,
    dlogits: &Matrix<T>,
) -> Result<ModelParams<T>> {
    let mut g = ModelParams::<T>::zeros(config);
    let t_len = cache.ids.len();
    let dh = config.d_head;
    let scale_inv = T::from_f64(1.0 / config.score_scale());
    let eta = T::from_f64(config.attention.eta().unwrap_or(0.0));
    let use_softmax = !matches!(config.attention, AttentionVariant::RelaxedLinear);

    // logits = z Eᵀ
    g.tok_emb.add_assign(&matmul_tn(dlogits, &cache.z)?)?;
    let dz = matmul(dlogits, &params.tok_emb)?;
    let mut dx = layer_norm_backward(&dz, &cache.lnf, &params.lnf_g, &mut g.lnf_g, &mut g.lnf_b);

    for (l, layer) in params.layers.iter().enumerate().rev() {
        let lc = &cache.layers[l];
        let gl = &mut g.layers[l];

        // feed-forward
        accumulate_rows(&mut gl.b_ff2, &dx);
        gl.w_ff2.add_assign(&matmul_tn(&dx, &lc.ff_act)?)?;
        let dact = matmul(&dx, &layer.w_ff2)?;
        let dpre = Matrix::from_fn(t_len, config.d_ffn, |r, c| dact.get(r, c) * gelu_grad(lc.ff_pre.get(r, c)));
        accumulate_rows(&mut gl.b_ff1, &dpre);
        gl.w_ff1.add_assign(&matmul_tn(&dpre, &lc.w)?)?;
        let dw = matmul(&dpre, &layer.w_ff1)?;
        let mut dx_mid = layer_norm_backward(&dw, &lc.ln2, &layer.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);
        dx_mid.add_assign(&dx)?;

        // attention output projection
        accumulate_rows(&mut gl.b_o, &dx_mid);
        gl.w_o.add_assign(&matmul_tn(&dx_mid, &lc.concat)?)?;
        let dconcat = matmul(&dx_mid, &layer.w_o)?;

        let mut du = Matrix::zeros(t_len, config.d_model);
        for (h, head) in layer.heads.iter().enumerate() {
            let (q, k, v, wts) = (&lc.q[h], &lc.k[h], &lc.v[h], &lc.weights[h]);
            let mut dq = Matrix::zeros(t_len, dh);
            let mut dk = Matrix::zeros(t_len, dh);
            let mut dv = Matrix::zeros(t_len, dh);
            let mut dscore = vec![T::zero(); t_len];
            for t in 0..t_len {
                let dout = &dconcat.row(t)[h * dh..(h + 1) * dh];
                let row = &wts.row(t)[..=t];
                for (j, &w) in row.iter().enumerate() {
                    axpy(dv.row_mut(j), w, dout);
                    dscore[j] = dot(dout, v.row(j));
                }
                if use_softmax {
                    let inner = row.iter().zip(&dscore[..=t]).map(|(&p, &dp)| p * dp).sum::<T>();
                    for (j, &p) in row.iter().enumerate() {
                        dscore[j] = p * (dscore[j] - inner);
                    }
                }
                for j in 0..=t {
                    let ds = dscore[j] * scale_inv;
                    axpy(dq.row_mut(t), ds, k.row(j));
                    axpy(dk.row_mut(j), ds, q.row(t));
                }
            }
            if eta > T::zero() {
                // v_i feeds every later output t > i with weight η^{t-i}
                let mut carry = vec![T::zero(); dh];
                for i in (0..t_len.saturating_sub(1)).rev() {
                    let dout_next = &dconcat.row(i + 1)[h * dh..(h + 1) * dh];
                    for (c, &d) in carry.iter_mut().zip(dout_next) {
                        *c = eta * (*c + d);
                    }
                    axpy(dv.row_mut(i), T::one(), &carry);
                }
            }
            let gh = &mut gl.heads[h];
            gh.w_q.add_assign(&matmul_tn(&dq, &lc.u)?)?;
            gh.w_k.add_assign(&matmul_tn(&dk, &lc.u)?)?;
            gh.w_v.add_assign(&matmul_tn(&dv, &lc.u)?)?;
            du.add_assign(&matmul(&dq, &head.w_q)?)?;
            du.add_assign(&matmul(&dk, &head.w_k)?)?;
            du.add_assign(&matmul(&dv, &head.w_v)?)?;
        }
        let mut dx_in = layer_norm_backward(&du, &lc.ln1, &layer.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
        dx_in.add_assign(&dx_mid)?;
        dx = dx_in;
    }

    for (t, &id) in cache.ids.iter().enumerate() {
        axpy(g.tok_emb.row_mut(id as usize), T::one(), dx.row(t));
        axpy(g.pos_emb.row_mut(t), T::one(), dx.row(t));
    }
    Ok(g)
}

/// `(position predicting, target id)` pairs for the LM loss.
fn loss_targets(seq: &TokenSequence, positions: LossPositions) -> Vec<(usize, u32)> {
    match positions {
        LossPositions::All => (1..seq.ids.len()).map(|p| (p - 1, seq.ids[p])).collect(),
        LossPositions::LabelsOnly => seq
            .label_positions
            .iter()
            .filter(|&&p| p >= 1 && p < seq.ids.len())
            .map(|&p| (p - 1, seq.ids[p]))
            .collect(),
    }
}

/// Summed cross-entropy and, when `dlogits_scale` is given, the logits
/// gradient of `dlogits_scale * sum`.
fn cross_entropy<T: Real>(
    logits: &Matrix<T>,
    targets: &[(usize, u32)],
    dlogits_scale: Option<T>,
) -> (f64, Option<Matrix<T>>) {
    let mut total = 0.0f64;
    let mut dlogits = dlogits_scale.map(|_| Matrix::zeros(logits.rows(), logits.cols()));
    for &(pos, target) in targets {
        let row = logits.row(pos);
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let mut probs: Vec<T> = row.iter().map(|&x| (x - max).exp()).collect();
        let z = probs.iter().copied().sum::<T>();
        total += (z.ln() + max - row[target as usize]).as_f64();
        if let (Some(d), Some(scale)) = (dlogits.as_mut(), dlogits_scale) {
            for p in probs.iter_mut() {
                *p /= z;
            }
            probs[target as usize] -= T::one();
            axpy(d.row_mut(pos), scale, &probs);
        }
    }
    (total, dlogits)
}

/// Summed next-token cross-entropy and the number of predictions.
pub fn sequence_loss<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    seq: &TokenSequence,
    positions: LossPositions,
) -> Result<(f64, usize)> {
    let (logits, _, _) = run(params, config, &seq.ids, false, false)?;
    let targets = loss_targets(seq, positions);
    Ok((cross_entropy(&logits, &targets, None).0, targets.len()))
}

struct SeqGrad<T> {
    loss_sum: f64,
    grads: ModelParams<T>,
    trace: Option<ForwardTrace<T>>,
}

fn seq_grad<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    seq: &TokenSequence,
    targets: &[(usize, u32)],
    scale: T,
    trace: bool,
) -> Result<SeqGrad<T>> {
    let (logits, cache, trace) = run(params, config, &seq.ids, true, trace)?;
    let (loss_sum, dlogits) = cross_entropy(&logits, targets, Some(scale));
    let grads = backward(params, config, &cache.expect("cache requested"), &dlogits.expect("scale given"))?;
    Ok(SeqGrad { loss_sum, grads, trace })
}

/// Mean next-token cross-entropy over every predicted position of the batch
/// and its exact gradient.
///
/// Per-sequence gradients may be computed concurrently; they are always
/// summed in batch order, so the result does not depend on the worker count.
pub fn loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &[TokenSequence],
    positions: LossPositions,
) -> Result<(f64, ModelParams<T>)> {
    let targets: Vec<Vec<(usize, u32)>> = batch.iter().map(|s| loss_targets(s, positions)).collect();
    let count: usize = targets.iter().map(|t| t.len()).sum();
    if count == 0 {
        return Err(Error::Length("no predicted positions (need at least 2 tokens)".into()));
    }
    let scale = T::from_f64(1.0 / count as f64);
    let parts: Vec<Result<SeqGrad<T>>> = batch
        .par_iter()
        .zip(targets.par_iter())
        .map(|(seq, tg)| seq_grad(params, config, seq, tg, scale, false))
        .collect();
    let mut grads = ModelParams::zeros(config);
    let mut loss = 0.0;
    for part in parts {
        let part = part?;
        loss += part.loss_sum;
        grads.axpy(T::one(), &part.grads);
    }
    Ok((loss / count as f64, grads))
}

/// Single-sequence loss, gradient and forward trace from the same pass.
pub(crate) fn loss_grads_and_trace<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    seq: &TokenSequence,
    positions: LossPositions,
) -> Result<(f64, ModelParams<T>, ForwardTrace<T>)> {
    let targets = loss_targets(seq, positions);
    if targets.is_empty() {
        return Err(Error::Length("no predicted positions (need at least 2 tokens)".into()));
    }
    let scale = T::from_f64(1.0 / targets.len() as f64);
    let part = seq_grad(params, config, seq, &targets, scale, true)?;
    Ok((part.loss_sum / targets.len() as f64, part.grads, part.trace.expect("trace requested")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerScores {
    /// Candidate logits `l_j = M(I) · e_{y_j}`.
    pub logits: Vec<f64>,
    /// Softmax over the candidate logits only.
    pub probabilities: Vec<f64>,
    /// Arg-max; ties go to the lowest index.
    pub predicted: usize,
}

/// Score single-token candidates from the last row of a logits matrix.
pub fn answer_scores<T: Real>(logits: &Matrix<T>, candidates: &[u32]) -> Result<AnswerScores> {
    if candidates.is_empty() {
        return Err(config_err("empty candidate answer set"));
    }
    let last = logits.row(logits.rows() - 1);
    let cand_logits = candidates
        .iter()
        .map(|&c| {
            last.get(c as usize)
                .map(|v| v.as_f64())
                .ok_or(Error::Vocab { id: c, vocab_size: last.len() })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut probabilities = cand_logits.clone();
    softmax_in_place(&mut probabilities);
    let mut predicted = 0;
    for (i, &l) in cand_logits.iter().enumerate() {
        if l > cand_logits[predicted] {
            predicted = i;
        }
    }
    Ok(AnswerScores { logits: cand_logits, probabilities, predicted })
}

pub fn score_answers<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    context: &TokenSequence,
    candidates: &[u32],
) -> Result<AnswerScores> {
    if candidates.is_empty() {
        return Err(config_err("empty candidate answer set"));
    }
    let out = forward(params, config, context, false)?;
    answer_scores(&out.logits, candidates)
}
