//! Decoder-only transformer: pre-LN blocks, learned absolute positions,
//! tied input/output embeddings.

mod checkpoint;
mod forward;
mod params;
mod train;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionVariant;
use crate::error::{config_err, Result};
use crate::tensor::Precision;
use crate::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint_config, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{
    answer_scores, forward, forward_layers, loss_and_grads, score_answers, sequence_loss, AnswerScores,
    ForwardOutput, ForwardTrace, LossPositions,
};
pub(crate) use forward::loss_grads_and_trace;
pub use params::{LayerParams, ModelParams};
pub use train::{
    perplexity, train_lm, Corpus, LossPoint, LrSchedule, Optimizer, TrainHyper, TrainOutcome,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    SqrtDModel,
    SqrtDHead,
}

/// Where the per-layer attention output `h^(l)` is captured for traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapturePoint {
    /// Attention sublayer output after the output projection, before the residual add.
    PreResidual,
    /// Residual stream after adding the attention sublayer output.
    PostResidual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub n_layers: usize,
    pub d_ffn: usize,
    pub max_seq_len: usize,
    pub attention: AttentionVariant,
    pub scaling: Scaling,
    pub capture: CapturePoint,
    pub precision: Precision,
}

impl Default for ModelConfig {
    /// Desk-scale default: 2 layers, width 64, 4 heads.
    fn default() -> Self {
        Self {
            vocab_size: 256,
            d_model: 64,
            n_heads: 4,
            d_head: 16,
            n_layers: 2,
            d_ffn: 256,
            max_seq_len: 256,
            attention: AttentionVariant::Standard,
            scaling: Scaling::SqrtDModel,
            capture: CapturePoint::PreResidual,
            precision: Precision::Single,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("n_layers", self.n_layers),
            ("d_ffn", self.d_ffn),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(config_err(format!("{name} must be at least 1")));
        }
        if self.vocab_size > u32::MAX as usize {
            return Err(config_err("vocab_size exceeds u32 token ids"));
        }
        self.attention.validate()
    }

    pub fn attention_width(&self) -> usize {
        self.n_heads * self.d_head
    }

    pub fn score_scale(&self) -> f64 {
        match (self.attention, self.scaling) {
            (AttentionVariant::RelaxedLinear, _) => 1.0,
            (_, Scaling::SqrtDModel) => (self.d_model as f64).sqrt(),
            (_, Scaling::SqrtDHead) => (self.d_head as f64).sqrt(),
        }
    }

    /// Ordered `key=value` pairs; the canonical text form used by config
    /// files and checkpoints.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let (kind, eta) = match self.attention {
            AttentionVariant::Standard => ("standard", None),
            AttentionVariant::RelaxedLinear => ("relaxed_linear", None),
            AttentionVariant::Momentum { eta } => ("momentum", Some(eta)),
        };
        let mut kv = vec![
            ("vocab_size", self.vocab_size.to_string()),
            ("d_model", self.d_model.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("d_head", self.d_head.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("d_ffn", self.d_ffn.to_string()),
            ("max_seq_len", self.max_seq_len.to_string()),
            ("attention", kind.to_string()),
        ];
        if let Some(eta) = eta {
            kv.push(("eta", format!("{eta:?}")));
        }
        kv.push((
            "scaling",
            match self.scaling {
                Scaling::SqrtDModel => "sqrt_d_model",
                Scaling::SqrtDHead => "sqrt_d_head",
            }
            .to_string(),
        ));
        kv.push((
            "capture",
            match self.capture {
                CapturePoint::PreResidual => "pre_residual",
                CapturePoint::PostResidual => "post_residual",
            }
            .to_string(),
        ));
        kv.push(("precision", self.precision.to_string()));
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Apply recognised keys from `kv` on top of `self`. Unknown keys are
    /// ignored so model keys can share a file with experiment keys.
    pub fn apply_kv(mut self, kv: &BTreeMap<String, String>) -> Result<Self> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| config_err(format!("{key}: cannot parse {v:?}")))
        }
        for (key, value) in kv {
            match key.as_str() {
                "vocab_size" => self.vocab_size = parse(key, value)?,
                "d_model" => self.d_model = parse(key, value)?,
                "n_heads" => self.n_heads = parse(key, value)?,
                "d_head" => self.d_head = parse(key, value)?,
                "n_layers" => self.n_layers = parse(key, value)?,
                "d_ffn" => self.d_ffn = parse(key, value)?,
                "max_seq_len" => self.max_seq_len = parse(key, value)?,
                "scaling" => {
                    self.scaling = match value.trim() {
                        "sqrt_d_model" => Scaling::SqrtDModel,
                        "sqrt_d_head" => Scaling::SqrtDHead,
                        other => return Err(config_err(format!("scaling: unknown value {other:?}"))),
                    }
                }
                "capture" => {
                    self.capture = match value.trim() {
                        "pre_residual" => CapturePoint::PreResidual,
                        "post_residual" => CapturePoint::PostResidual,
                        other => return Err(config_err(format!("capture: unknown value {other:?}"))),
                    }
                }
                "precision" => self.precision = value.trim().parse()?,
                _ => {}
            }
        }
        if let Some(kind) = kv.get("attention") {
            self.attention = match kind.trim() {
                "standard" => AttentionVariant::Standard,
                "relaxed_linear" => AttentionVariant::RelaxedLinear,
                "momentum" => {
                    let eta = kv
                        .get("eta")
                        .ok_or_else(|| config_err("attention=momentum requires eta"))?;
                    AttentionVariant::momentum(parse("eta", eta)?)?
                }
                other => return Err(config_err(format!("attention: unknown value {other:?}"))),
            };
        } else if let (AttentionVariant::Momentum { .. }, Some(eta)) = (self.attention, kv.get("eta")) {
            self.attention = AttentionVariant::momentum(parse("eta", eta)?)?;
        }
        self.validate()?;
        Ok(self)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_kv() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Demonstration,
    Query,
}

/// Token range of one formatted example inside an assembled context.
/// `start..content_end` holds the formatted example and `content_end..end`
/// any trailing separator, so consecutive spans tile the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub kind: SpanKind,
    pub start: usize,
    pub content_end: usize,
    pub end: usize,
}

impl Span {
    pub fn content(&self) -> std::ops::Range<usize> {
        self.start..self.content_end
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub spans: Vec<Span>,
    /// Positions holding a label token (targets for label-only losses).
    pub label_positions: Vec<usize>,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<u32>) -> Self {
        Self { ids, spans: Vec::new(), label_positions: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn demo_spans(&self) -> impl Iterator<Item = &Span> {
        self.spans.iter().filter(|s| s.kind == SpanKind::Demonstration)
    }

    pub fn query_span(&self) -> Option<&Span> {
        self.spans.iter().find(|s| s.kind == SpanKind::Query)
    }

    /// Positions of demonstration example tokens, separators excluded.
    pub fn demo_token_positions(&self) -> Vec<usize> {
        self.demo_spans().flat_map(|s| s.content()).collect()
    }

    /// Positions of the query example's tokens.
    pub fn query_token_positions(&self) -> Vec<usize> {
        match self.query_span() {
            Some(s) => s.content().collect(),
            None => (0..self.len()).collect(),
        }
    }

    pub fn check(&self, vocab_size: usize, max_seq_len: usize) -> Result<()> {
        if self.ids.len() > max_seq_len {
            return Err(Error::Length(format!(
                "{} tokens exceed max_seq_len {max_seq_len}",
                self.ids.len()
            )));
        }
        if let Some(&id) = self.ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::Vocab { id, vocab_size });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_kv() {
        let mut cfg = ModelConfig {
            attention: AttentionVariant::Momentum { eta: 0.3 },
            scaling: Scaling::SqrtDHead,
            capture: CapturePoint::PostResidual,
            precision: Precision::Double,
            ..ModelConfig::default()
        };
        cfg.vocab_size = 99;
        let kv: BTreeMap<String, String> = cfg.to_kv().into_iter().collect();
        let back = ModelConfig::default().apply_kv(&kv).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut kv = BTreeMap::new();
        kv.insert("attention".to_string(), "momentum".to_string());
        assert!(ModelConfig::default().apply_kv(&kv).is_err());
        kv.insert("eta".to_string(), "1.5".to_string());
        assert!(ModelConfig::default().apply_kv(&kv).is_err());
        let zero = ModelConfig { n_heads: 0, ..ModelConfig::default() };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn sequence_checks() {
        let s = TokenSequence::from_ids(vec![1, 2, 3]);
        assert!(s.check(4, 3).is_ok());
        assert!(matches!(s.check(3, 3), Err(Error::Vocab { id: 3, .. })));
        assert!(matches!(s.check(4, 2), Err(Error::Length(_))));
    }
}
