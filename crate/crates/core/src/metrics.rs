//! Comparison metrics between ICL, finetuning and zero-shot runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::finetune::FinetuneResult;
use crate::model::ForwardTrace;
use crate::rng::derive_seed;
use crate::tensor::{compensated_mean, cosine_slices, Distribution, Real};
use crate::Error;

/// Predicted and gold class indices for one query example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionTriple {
    pub gold: usize,
    pub zsl: usize,
    pub ft: usize,
    pub icl: usize,
}

/// `N₂ / N₁` where `N₁` counts examples FT gets right and ZSL wrong and `N₂`
/// those among them ICL also gets right. `None` when `N₁ = 0`.
pub fn rec2ftp(triples: &[PredictionTriple]) -> Result<Option<f64>> {
    if triples.is_empty() {
        return Err(config_err("rec2ftp needs at least one prediction"));
    }
    let (n1, n2) = triples
        .iter()
        .filter(|t| t.ft == t.gold && t.zsl != t.gold)
        .fold((0usize, 0usize), |(n1, n2), t| (n1 + 1, n2 + usize::from(t.icl == t.gold)));
    Ok((n1 > 0).then(|| n2 as f64 / n1 as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    L2,
    None,
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Normalization::L2 => "l2",
            Normalization::None => "none",
        })
    }
}

fn check_layers<T: Real>(traces: &[&ForwardTrace<T>]) -> Result<usize> {
    let n = traces[0].n_layers();
    if traces.iter().any(|t| t.n_layers() != n) {
        return Err(shape_err("traces have different layer counts"));
    }
    Ok(n)
}

fn output(trace: &ForwardTrace<impl Real>, layer: usize, norm: Normalization) -> Vec<f64> {
    let h = trace.attn_out[layer].to_f64_vec();
    match norm {
        Normalization::None => h,
        Normalization::L2 => {
            let n = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < crate::tensor::COSINE_EPS {
                h
            } else {
                h.iter().map(|v| v / n).collect()
            }
        }
    }
}

fn update(from: &[f64], to: &[f64]) -> Vec<f64> {
    to.iter().zip(from).map(|(a, b)| a - b).collect()
}

/// Per layer: cosine of the ICL and FT updates of the last token's attention
/// output relative to ZSL.
pub fn simaou<T: Real>(
    trace_icl: &ForwardTrace<T>,
    trace_ft: &ForwardTrace<T>,
    trace_zsl: &ForwardTrace<T>,
    normalization: Normalization,
) -> Result<Vec<f64>> {
    let n = check_layers(&[trace_icl, trace_ft, trace_zsl])?;
    (0..n)
        .map(|l| {
            let zsl = output(trace_zsl, l, normalization);
            let icl = update(&zsl, &output(trace_icl, l, normalization));
            let ft = update(&zsl, &output(trace_ft, l, normalization));
            if icl.len() != ft.len() {
                return Err(shape_err("attention outputs differ in width"));
            }
            Ok(cosine_slices(&icl, &ft))
        })
        .collect()
}

/// Per layer: mean cosine between the ICL update and `n_samples` standard
/// gaussian updates of the same shape.
pub fn simaou_random_baseline<T: Real>(
    trace_icl: &ForwardTrace<T>,
    trace_zsl: &ForwardTrace<T>,
    normalization: Normalization,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(config_err("n_samples must be at least 1"));
    }
    let n = check_layers(&[trace_icl, trace_zsl])?;
    (0..n)
        .map(|l| {
            let zsl = output(trace_zsl, l, normalization);
            let icl = update(&zsl, &output(trace_icl, l, normalization));
            let values = (0..n_samples)
                .map(|s| {
                    let r = Distribution::standard_normal()
                        .sample_f64(icl.len(), derive_seed(seed, &format!("simaou.random.{l}.{s}")))?;
                    Ok(cosine_slices(&icl, &r))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(compensated_mean(&values).unwrap_or(0.0))
        })
        .collect()
}

/// Per layer: mean over heads of the cosine between pre-softmax last-token
/// attention scores restricted to query-token positions. The position lists
/// pair up the same query tokens in the two contexts.
pub fn simam<T: Real>(
    trace_a: &ForwardTrace<T>,
    positions_a: &[usize],
    trace_b: &ForwardTrace<T>,
    positions_b: &[usize],
) -> Result<Vec<f64>> {
    if positions_a.is_empty() {
        return Err(config_err("simam needs at least one query position"));
    }
    if positions_a.len() != positions_b.len() {
        return Err(shape_err("query position lists differ in length"));
    }
    let n = check_layers(&[trace_a, trace_b])?;
    if trace_a.n_heads() != trace_b.n_heads() {
        return Err(shape_err("traces have different head counts"));
    }
    (0..n)
        .map(|l| {
            let per_head = trace_a.pre_softmax[l]
                .iter()
                .zip(&trace_b.pre_softmax[l])
                .map(|(ma, mb)| {
                    let a = ma.select(positions_a)?.to_f64_vec();
                    let b = mb.select(positions_b)?.to_f64_vec();
                    Ok(cosine_slices(&a, &b))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(compensated_mean(&per_head).unwrap_or(0.0))
        })
        .collect()
}

/// Merge sort on `v`, returning the number of inversions (`i < j`, `v[i] > v[j]`).
fn count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_inversions(&mut v[..mid], buf) + count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Tied pairs within runs of equal values of a sorted sequence.
fn tied_pairs<K: PartialEq>(sorted: impl Iterator<Item = K>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<K> = None;
    for k in sorted {
        if prev.as_ref() == Some(&k) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(k);
    }
    total + run * (run + 1) / 2
}

/// Kendall tau-a: `(P_c − P_d) / (N(N−1)/2)`, with tied pairs counted in
/// neither `P_c` nor `P_d`. Runs in `O(N log N)` with exact integer counts.
pub fn kendall(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape_err(format!("kendall: lengths {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(config_err("kendall needs at least 2 entries"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(config_err("kendall inputs must be finite"));
    }
    // fold -0.0 into 0.0 so bit patterns and total order agree with ==
    let canon = |v: f64| if v == 0.0 { 0.0 } else { v };
    let mut pairs: Vec<(f64, f64)> = a.iter().zip(b).map(|(&x, &y)| (canon(x), canon(y))).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let key = f64::to_bits;
    let ties_a = tied_pairs(pairs.iter().map(|p| key(p.0)));
    let ties_joint = tied_pairs(pairs.iter().map(|p| (key(p.0), key(p.1))));
    let mut bs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let discordant = count_inversions(&mut bs, &mut Vec::with_capacity(n));
    let ties_b = tied_pairs(bs.iter().map(|&v| key(v)));
    let total = (n as u64) * (n as u64 - 1) / 2;
    let numerator = total as i128 - ties_a as i128 - ties_b as i128 + ties_joint as i128 - 2 * discordant as i128;
    Ok(numerator as f64 / total as f64)
}

/// Mean Kendall tau of `m_icl` against `n_samples` uniform(0, 1) vectors.
pub fn kendall_random_baseline(m_icl: &[f64], n_samples: usize, seed: u64) -> Result<f64> {
    if n_samples == 0 {
        return Err(config_err("n_samples must be at least 1"));
    }
    let uniform = Distribution::Uniform { lo: 0.0, hi: 1.0 };
    let values = (0..n_samples)
        .map(|s| kendall(m_icl, &uniform.sample_f64(m_icl.len(), derive_seed(seed, &format!("kendall.random.{s}")))?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(compensated_mean(&values).expect("n_samples >= 1"))
}

/// `m_FT^(l) = Σ_h Q'^(l,h)ᵀ q^(l,h)`: inner products between every recorded
/// training-token query and the query example's last-token query.
pub fn ft_attention_map<T: Real>(result: &FinetuneResult<T>, trace_query: &ForwardTrace<T>, layer: usize) -> Result<Vec<f64>> {
    let recorded = result
        .train_queries
        .get(layer)
        .filter(|heads| !heads.is_empty() && heads[0].cols() > 0)
        .ok_or_else(|| Error::State(format!("no training-token queries recorded for layer {layer}")))?;
    if layer >= trace_query.n_layers() || recorded.len() != trace_query.n_heads() {
        return Err(shape_err("trace does not match the finetuning recordings"));
    }
    let mut out = vec![0.0f64; recorded[0].cols()];
    for (h, qp) in recorded.iter().enumerate() {
        let q = trace_query.last_query(layer, h).cast::<f64>();
        let scores = qp.cast::<f64>().matvec_t(&q)?;
        for (o, s) in out.iter_mut().zip(scores.as_slice()) {
            *o += s;
        }
    }
    Ok(out)
}

/// Pre-softmax last-token scores at `positions`, summed over heads.
pub fn icl_attention_map<T: Real>(trace_icl: &ForwardTrace<T>, positions: &[usize], layer: usize) -> Result<Vec<f64>> {
    let heads = trace_icl
        .pre_softmax
        .get(layer)
        .ok_or_else(|| shape_err(format!("layer {layer} out of range")))?;
    let mut out = vec![0.0f64; positions.len()];
    for m in heads {
        for (o, v) in out.iter_mut().zip(m.select(positions)?.as_slice()) {
            *o += v.as_f64();
        }
    }
    Ok(out)
}

/// One metric aggregated over examples (first) and layers (second).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub model: String,
    pub task: String,
    pub seed: u64,
    pub per_layer: Vec<f64>,
    /// `None` when the metric is undefined for the data (Rec2FTP with `N₁ = 0`).
    pub mean: Option<f64>,
    pub baseline_mean: Option<f64>,
    pub normalization: Option<Normalization>,
    pub n_examples: usize,
    #[serde(skip)]
    pub per_example: Vec<Vec<f64>>,
    #[serde(skip)]
    pub baseline_per_example: Vec<Vec<f64>>,
}

fn layer_means(values: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n_layers = values.first().map_or(0, |v| v.len());
    if values.iter().any(|v| v.len() != n_layers) {
        return Err(shape_err("examples report different layer counts"));
    }
    Ok((0..n_layers)
        .map(|l| compensated_mean(&values.iter().map(|v| v[l]).collect::<Vec<_>>()).unwrap_or(0.0))
        .collect())
}

impl MetricReport {
    /// Build from per-example, per-layer values (`values[example][layer]`).
    pub fn from_layers(
        metric: &str,
        model: &str,
        task: &str,
        seed: u64,
        values: Vec<Vec<f64>>,
        baseline: Option<Vec<Vec<f64>>>,
        normalization: Option<Normalization>,
    ) -> Result<Self> {
        let per_layer = layer_means(&values)?;
        let baseline_mean = match &baseline {
            Some(b) => compensated_mean(&layer_means(b)?),
            None => None,
        };
        Ok(Self {
            metric: metric.to_string(),
            model: model.to_string(),
            task: task.to_string(),
            seed,
            mean: compensated_mean(&per_layer),
            per_layer,
            baseline_mean,
            normalization,
            n_examples: values.len(),
            per_example: values,
            baseline_per_example: baseline.unwrap_or_default(),
        })
    }

    /// A whole-dataset scalar such as Rec2FTP.
    pub fn scalar(metric: &str, model: &str, task: &str, seed: u64, value: Option<f64>, n_examples: usize) -> Self {
        Self {
            metric: metric.to_string(),
            model: model.to_string(),
            task: task.to_string(),
            seed,
            per_layer: Vec::new(),
            mean: value,
            baseline_mean: None,
            normalization: None,
            n_examples,
            per_example: Vec::new(),
            baseline_per_example: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per `(example, layer)`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_record(["metric", "example", "layer", "value", "baseline"])?;
        for (e, layers) in self.per_example.iter().enumerate() {
            for (l, v) in layers.iter().enumerate() {
                let base = self.baseline_per_example.get(e).and_then(|b| b.get(l)).map_or(String::new(), |b| b.to_string());
                w.write_record([self.metric.clone(), e.to_string(), l.to_string(), v.to_string(), base])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
