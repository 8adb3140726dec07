use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::attention::HeadParams;
use crate::error::{shape_err, Result};
use crate::rng::derive_seed;
use crate::tensor::{Distribution, Matrix, Real, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams<T> {
    pub ln1_g: Vector<T>,
    pub ln1_b: Vector<T>,
    pub heads: Vec<HeadParams<T>>,
    /// `d_model x (n_heads * d_head)`
    pub w_o: Matrix<T>,
    pub b_o: Vector<T>,
    pub ln2_g: Vector<T>,
    pub ln2_b: Vector<T>,
    /// `d_ffn x d_model`
    pub w_ff1: Matrix<T>,
    pub b_ff1: Vector<T>,
    /// `d_model x d_ffn`
    pub w_ff2: Matrix<T>,
    pub b_ff2: Vector<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    /// `vocab_size x d_model`; also the output projection.
    pub tok_emb: Matrix<T>,
    /// `max_seq_len x d_model`
    pub pos_emb: Matrix<T>,
    pub layers: Vec<LayerParams<T>>,
    pub lnf_g: Vector<T>,
    pub lnf_b: Vector<T>,
}

const INIT_STD: f64 = 0.02;

impl<T: Real> ModelParams<T> {
    /// All-zero parameters with the shapes `config` prescribes (the layout
    /// of a gradient).
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let layer = || LayerParams {
            ln1_g: Vector::zeros(d),
            ln1_b: Vector::zeros(d),
            heads: (0..config.n_heads)
                .map(|_| HeadParams {
                    w_q: Matrix::zeros(config.d_head, d),
                    w_k: Matrix::zeros(config.d_head, d),
                    w_v: Matrix::zeros(config.d_head, d),
                })
                .collect(),
            w_o: Matrix::zeros(d, config.attention_width()),
            b_o: Vector::zeros(d),
            ln2_g: Vector::zeros(d),
            ln2_b: Vector::zeros(d),
            w_ff1: Matrix::zeros(config.d_ffn, d),
            b_ff1: Vector::zeros(config.d_ffn),
            w_ff2: Matrix::zeros(d, config.d_ffn),
            b_ff2: Vector::zeros(d),
        };
        Self {
            tok_emb: Matrix::zeros(config.vocab_size, d),
            pos_emb: Matrix::zeros(config.max_seq_len, d),
            layers: (0..config.n_layers).map(|_| layer()).collect(),
            lnf_g: Vector::zeros(d),
            lnf_b: Vector::zeros(d),
        }
    }

    /// GPT-style initialisation: N(0, 0.02) weights, residual output
    /// projections shrunk by `1/√(2L)`, unit layer-norm gains, zero biases.
    /// Every tensor draws from its own child seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let resid_std = INIT_STD / ((2 * config.n_layers) as f64).sqrt();
        let names: Vec<String> = p.names();
        for (name, slot) in names.iter().zip(p.slots_mut()) {
            let leaf = name.rsplit('.').next().unwrap_or(name);
            if leaf == "g" {
                slot.iter_mut().for_each(|v| *v = T::one());
                continue;
            }
            if leaf.starts_with('b') {
                continue;
            }
            let std = if leaf == "w_o" || leaf == "w_ff2" { resid_std } else { INIT_STD };
            let dist = Distribution::Gaussian { mean: 0.0, std };
            let values = dist.sample_f64(slot.len(), derive_seed(seed, name))?;
            for (s, v) in slot.iter_mut().zip(values) {
                *s = T::from_f64(v);
            }
        }
        Ok(p)
    }

    /// Stable parameter names in canonical order.
    pub fn names(&self) -> Vec<String> {
        self.slots().into_iter().map(|(n, _, _)| n).collect()
    }

    /// `(name, shape, values)` for every tensor, in canonical order.
    pub fn slots(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out: Vec<(String, Vec<usize>, &[T])> = Vec::new();
        fn m<T: Real>(name: String, x: &Matrix<T>) -> (String, Vec<usize>, &[T]) {
            (name, vec![x.rows(), x.cols()], x.as_slice())
        }
        fn v<T: Real>(name: String, x: &Vector<T>) -> (String, Vec<usize>, &[T]) {
            (name, vec![x.dim()], x.as_slice())
        }
        out.push(m("tok_emb".into(), &self.tok_emb));
        out.push(m("pos_emb".into(), &self.pos_emb));
        for (l, layer) in self.layers.iter().enumerate() {
            let name = |n: &str| format!("layers.{l}.{n}");
            out.push(v(name("ln1.g"), &layer.ln1_g));
            out.push(v(name("ln1.b"), &layer.ln1_b));
            for (h, head) in layer.heads.iter().enumerate() {
                out.push(m(name(&format!("heads.{h}.w_q")), &head.w_q));
                out.push(m(name(&format!("heads.{h}.w_k")), &head.w_k));
                out.push(m(name(&format!("heads.{h}.w_v")), &head.w_v));
            }
            out.push(m(name("w_o"), &layer.w_o));
            out.push(v(name("b_o"), &layer.b_o));
            out.push(v(name("ln2.g"), &layer.ln2_g));
            out.push(v(name("ln2.b"), &layer.ln2_b));
            out.push(m(name("w_ff1"), &layer.w_ff1));
            out.push(v(name("b_ff1"), &layer.b_ff1));
            out.push(m(name("w_ff2"), &layer.w_ff2));
            out.push(v(name("b_ff2"), &layer.b_ff2));
        }
        out.push(v("lnf.g".into(), &self.lnf_g));
        out.push(v("lnf.b".into(), &self.lnf_b));
        out
    }

    /// Mutable views in the same order as [`ModelParams::slots`].
    pub fn slots_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        out.push(self.tok_emb.as_mut_slice());
        out.push(self.pos_emb.as_mut_slice());
        for layer in &mut self.layers {
            out.push(layer.ln1_g.as_mut_slice());
            out.push(layer.ln1_b.as_mut_slice());
            for head in &mut layer.heads {
                out.push(head.w_q.as_mut_slice());
                out.push(head.w_k.as_mut_slice());
                out.push(head.w_v.as_mut_slice());
            }
            out.push(layer.w_o.as_mut_slice());
            out.push(layer.b_o.as_mut_slice());
            out.push(layer.ln2_g.as_mut_slice());
            out.push(layer.ln2_b.as_mut_slice());
            out.push(layer.w_ff1.as_mut_slice());
            out.push(layer.b_ff1.as_mut_slice());
            out.push(layer.w_ff2.as_mut_slice());
            out.push(layer.b_ff2.as_mut_slice());
        }
        out.push(self.lnf_g.as_mut_slice());
        out.push(self.lnf_b.as_mut_slice());
        out
    }

    pub fn n_params(&self) -> usize {
        self.slots().iter().map(|(_, _, s)| s.len()).sum()
    }

    /// Check every tensor shape against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let reference = Self::zeros(config);
        let mine = self.slots();
        let theirs = reference.slots();
        if mine.len() != theirs.len() {
            return Err(shape_err(format!("{} tensors, config implies {}", mine.len(), theirs.len())));
        }
        for ((name, shape, _), (_, expected, _)) in mine.iter().zip(&theirs) {
            if shape != expected {
                return Err(shape_err(format!("{name}: shape {shape:?}, config implies {expected:?}")));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.slots().iter().all(|(_, _, s)| s.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (dst, (_, _, src)) in self.slots_mut().into_iter().zip(other.slots()) {
            crate::tensor::axpy(dst, alpha, src);
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for slot in self.slots_mut() {
            slot.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// Global L2 norm over every tensor, accumulated in `f64`.
    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0f64;
        for (_, _, slot) in self.slots() {
            for &v in slot {
                acc += v.as_f64() * v.as_f64();
            }
        }
        acc.sqrt()
    }

    /// Names whose values differ bitwise from `other`.
    pub fn changed_tensors(&self, other: &Self) -> Vec<String> {
        self.slots()
            .iter()
            .zip(other.slots())
            .filter(|((_, _, a), (_, _, b))| {
                a.len() != b.len() || a.iter().zip(b.iter()).any(|(x, y)| x.bits_differ(y))
            })
            .map(|((name, _, _), _)| name.clone())
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            tok_emb: self.tok_emb.cast(),
            pos_emb: self.pos_emb.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_g: l.ln1_g.cast(),
                    ln1_b: l.ln1_b.cast(),
                    heads: l.heads.iter().map(|h| h.cast()).collect(),
                    w_o: l.w_o.cast(),
                    b_o: l.b_o.cast(),
                    ln2_g: l.ln2_g.cast(),
                    ln2_b: l.ln2_b.cast(),
                    w_ff1: l.w_ff1.cast(),
                    b_ff1: l.b_ff1.cast(),
                    w_ff2: l.w_ff2.cast(),
                    b_ff2: l.b_ff2.cast(),
                })
                .collect(),
            lnf_g: self.lnf_g.cast(),
            lnf_b: self.lnf_b.cast(),
        }
    }
}

/// Bitwise inequality, so that `-0.0` vs `0.0` and NaN payloads count as changes.
trait BitsDiffer {
    fn bits_differ(&self, other: &Self) -> bool;
}

impl<T: Real> BitsDiffer for T {
    fn bits_differ(&self, other: &Self) -> bool {
        let (a, b) = (self.as_f64(), other.as_f64());
        a.to_bits() != b.to_bits()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { vocab_size: 11, d_model: 8, n_heads: 2, d_head: 4, n_layers: 2, d_ffn: 16, max_seq_len: 12, ..ModelConfig::default() }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let cfg = tiny();
        let mut a = ModelParams::<f64>::init(&cfg, 5).unwrap();
        let b = ModelParams::<f64>::init(&cfg, 5).unwrap();
        let c = ModelParams::<f64>::init(&cfg, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.check_shapes(&cfg).unwrap();
        assert!(a.lnf_g.as_slice().iter().all(|&g| g == 1.0));
        assert!(a.layers[0].b_ff1.as_slice().iter().all(|&b| b == 0.0));
        assert_eq!(a.names().len(), a.slots_mut().len());
        let bigger = ModelConfig { d_ffn: 32, ..cfg };
        assert!(a.check_shapes(&bigger).is_err());
    }

    #[test]
    fn changed_tensors_is_bitwise() {
        let cfg = tiny();
        let a = ModelParams::<f32>::init(&cfg, 1).unwrap();
        let mut b = a.clone();
        assert!(a.changed_tensors(&b).is_empty());
        b.layers[1].heads[0].w_k.as_mut_slice()[3] += 1e-3;
        assert_eq!(a.changed_tensors(&b), vec!["layers.1.heads.0.w_k".to_string()]);
    }
}
