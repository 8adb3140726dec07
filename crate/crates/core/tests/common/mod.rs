//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use icldual::model::{loss_and_grads, LossPositions, ModelConfig, ModelParams, TokenSequence};

/// O(N²) tau-a straight from the definition.
pub fn kendall_brute(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            if da == 0.0 || db == 0.0 {
                continue;
            }
            s += if (da > 0.0) == (db > 0.0) { 1 } else { -1 };
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Init scaled up so attention is far from uniform, with perturbed norms.
pub fn lively(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::init(cfg, seed).unwrap();
    p.scale(15.0);
    let noise = ModelParams::<f64>::init(cfg, seed + 100).unwrap();
    for (dst, (name, _, src)) in p.slots_mut().into_iter().zip(noise.slots()) {
        if name.ends_with(".g") {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = 1.0 + 10.0 * s;
            }
        }
    }
    p
}

/// Worst relative error between analytic gradients and central differences
/// with step `h`, over every parameter, with the offending entry.
pub fn fd_max_rel_error(config: &ModelConfig, positions: LossPositions, h: f64) -> (f64, String) {
    let p = lively(config, 21);
    let mut a = TokenSequence::from_ids(vec![3, 1, 4, 1, 5, 9, 2, 6]);
    a.label_positions = vec![3, 6];
    let mut b = TokenSequence::from_ids(vec![10, 0, 7, 7, 2]);
    b.label_positions = vec![2, 4];
    let batch = [a, b];
    let (_, grads) = loss_and_grads(&p, config, &batch, positions).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.slots().into_iter().map(|(n, _, s)| (n, s.to_vec())).collect();
    let mut worst = (0.0, String::new());
    for (slot_idx, (name, g)) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let eval = |delta: f64| {
                let mut q = p.clone();
                q.slots_mut()[slot_idx][i] += delta;
                loss_and_grads(&q, config, &batch, positions).unwrap().0
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let denom = g[i].abs().max(numeric.abs()).max(1e-6);
            let rel = (g[i] - numeric).abs() / denom;
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}]"));
            }
        }
    }
    worst
}
