//! Plain-text experiment configuration: UTF-8 `key=value` lines, `#` comments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{config_err, Result};
use crate::finetune::QueryRecording;
use crate::metrics::Normalization;
use crate::model::{LossPositions, ModelConfig, Optimizer};
use crate::tasks::{TaskKind, TaskSizes};
use crate::Error;

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected key=value, got {raw:?}", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(config_err(format!("line {}: empty key", i + 1)));
        }
        kv.insert(k.to_string(), v.trim().to_string());
    }
    Ok(kv)
}

pub fn read_kv_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text)
}

const MODEL_KEYS: &[&str] = &[
    "vocab_size", "d_model", "n_heads", "d_head", "n_layers", "d_ffn", "max_seq_len", "attention", "eta", "scaling",
    "capture", "precision",
];

#[derive(Clone, Debug, PartialEq)]
pub enum TaskSource {
    Synthetic { kind: TaskKind, sizes: TaskSizes },
    Tsv { path: PathBuf, text_column: String, label_column: String },
}

#[derive(Clone, Debug, PartialEq)]
pub enum CorpusSource {
    /// ICL-style sequences from the configured synthetic task kind.
    Synthetic { n_seqs: usize, min_demos: usize, max_demos: usize },
    /// A file read byte by byte (vocabulary 256).
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub lr: f64,
    pub warmup: usize,
    pub end_lr: f64,
    pub clip_norm: Option<f64>,
    pub optimizer: Optimizer,
    pub log_every: usize,
    pub loss_positions: LossPositions,
    pub corpus: CorpusSource,
    pub valid_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualcheckSettings {
    pub trials: usize,
    /// `None` picks 1e-9 in double and 1e-4 in single precision.
    pub tol: Option<f64>,
    pub d_min: usize,
    pub d_max: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub m_min: usize,
    pub m_max: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// `vocab_size` follows the task or corpus unless set explicitly.
    pub vocab_auto: bool,
    pub task: TaskSource,
    pub task_seed: u64,
    pub n_demos: usize,
    pub n_eval: usize,
    pub seeds: Vec<u64>,
    pub lr_bases: Vec<f64>,
    pub lr_scales: Vec<f64>,
    pub ft_lr: f64,
    pub ft_loss_positions: LossPositions,
    pub query_recording: QueryRecording,
    pub baseline_samples: usize,
    pub normalization: Normalization,
    pub train: TrainSettings,
    pub eval_lengths: Vec<usize>,
    /// Cap on tokens per perplexity split.
    pub eval_max_tokens: usize,
    pub dualcheck: DualcheckSettings,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            vocab_auto: true,
            task: TaskSource::Synthetic { kind: TaskKind::TokenMajority, sizes: TaskSizes::default() },
            task_seed: 1,
            n_demos: 16,
            n_eval: 64,
            seeds: (1..=7).collect(),
            lr_bases: (1..=9).map(f64::from).collect(),
            lr_scales: vec![0.1, 0.01, 0.001, 0.0001],
            ft_lr: 0.01,
            ft_loss_positions: LossPositions::All,
            query_recording: QueryRecording::Sequential,
            baseline_samples: 100,
            normalization: Normalization::L2,
            train: TrainSettings {
                steps: 1500,
                batch_size: 8,
                seq_len: 128,
                lr: 1e-3,
                warmup: 100,
                end_lr: 1e-4,
                clip_norm: Some(2.0),
                optimizer: Optimizer::adam(),
                log_every: 50,
                loss_positions: LossPositions::All,
                corpus: CorpusSource::Synthetic { n_seqs: 20_000, min_demos: 4, max_demos: 16 },
                valid_fraction: 0.1,
            },
            eval_lengths: vec![32, 64, 128],
            eval_max_tokens: 16_384,
            dualcheck: DualcheckSettings {
                trials: 1000,
                tol: None,
                d_min: 2,
                d_max: 64,
                n_min: 0,
                n_max: 32,
                m_min: 1,
                m_max: 32,
            },
            seed: 1,
            workers: 1,
            out_dir: PathBuf::from("icldual-out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| config_err(format!("{key}: cannot parse {v:?}")))
}

/// Comma-separated list; integer lists also accept `a-b` ranges.
fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(config_err(format!("{key}: empty list")));
    }
    Ok(items)
}

fn parse_seeds(key: &str, v: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (parse(key, a)?, parse(key, b)?);
                if a > b {
                    return Err(config_err(format!("{key}: empty range {part}")));
                }
                out.extend(a..=b);
            }
            None => out.push(parse(key, part)?),
        }
    }
    if out.is_empty() {
        return Err(config_err(format!("{key}: empty list")));
    }
    Ok(out)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn positions_name(p: LossPositions) -> &'static str {
    match p {
        LossPositions::All => "all",
        LossPositions::LabelsOnly => "labels",
    }
}

fn parse_positions(key: &str, v: &str) -> Result<LossPositions> {
    match v {
        "all" => Ok(LossPositions::All),
        "labels" => Ok(LossPositions::LabelsOnly),
        _ => Err(config_err(format!("{key}: expected all or labels, got {v:?}"))),
    }
}

impl ExperimentConfig {
    /// Apply `kv` on top of `self`. Unknown keys are rejected.
    pub fn apply_kv(mut self, kv: &BTreeMap<String, String>) -> Result<Self> {
        let model_kv: BTreeMap<String, String> =
            kv.iter().filter(|(k, _)| MODEL_KEYS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
        if let Some(v) = model_kv.get("vocab_size") {
            self.vocab_auto = v == "auto";
        }
        let mut model_kv = model_kv;
        if self.vocab_auto {
            model_kv.remove("vocab_size");
        }
        self.model = self.model.apply_kv(&model_kv)?;

        let (mut kind, mut sizes) = match &self.task {
            TaskSource::Synthetic { kind, sizes } => (*kind, *sizes),
            TaskSource::Tsv { .. } => (TaskKind::TokenMajority, TaskSizes::default()),
        };
        let mut tsv: Option<(PathBuf, String, String)> = match &self.task {
            TaskSource::Tsv { path, text_column, label_column } => Some((path.clone(), text_column.clone(), label_column.clone())),
            TaskSource::Synthetic { .. } => None,
        };
        let (mut n_seqs, mut min_demos, mut max_demos) = match self.train.corpus {
            CorpusSource::Synthetic { n_seqs, min_demos, max_demos } => (n_seqs, min_demos, max_demos),
            CorpusSource::File(_) => (20_000, 4, 16),
        };
        let mut corpus_file: Option<PathBuf> = match &self.train.corpus {
            CorpusSource::File(p) => Some(p.clone()),
            CorpusSource::Synthetic { .. } => None,
        };
        let d = &mut self.dualcheck;
        for (key, v) in kv {
            let key = key.as_str();
            let v = v.as_str();
            match key {
                k if MODEL_KEYS.contains(&k) => {}
                "task.kind" => kind = parse(key, v)?,
                "task.n_train" => sizes.n_train = parse(key, v)?,
                "task.n_validation" => sizes.n_validation = parse(key, v)?,
                "task.input_len" => sizes.input_len = parse(key, v)?,
                "task.n_classes" => sizes.n_classes = parse(key, v)?,
                "task.class_words" => sizes.class_words = parse(key, v)?,
                "task.neutral_words" => sizes.neutral_words = parse(key, v)?,
                "task.label_pool" => sizes.label_pool = parse(key, v)?,
                "task.label_prompt" => sizes.label_prompt = parse(key, v)?,
                "task.seed" => self.task_seed = parse(key, v)?,
                "task.tsv" => {
                    let t = tsv.get_or_insert_with(|| (PathBuf::new(), "text".into(), "label".into()));
                    t.0 = PathBuf::from(v);
                }
                "task.text_column" => {
                    tsv.get_or_insert_with(|| (PathBuf::new(), "text".into(), "label".into())).1 = v.to_string()
                }
                "task.label_column" => {
                    tsv.get_or_insert_with(|| (PathBuf::new(), "text".into(), "label".into())).2 = v.to_string()
                }
                "icl.n_demos" => self.n_demos = parse(key, v)?,
                "icl.n_eval" => self.n_eval = parse(key, v)?,
                "grid.seeds" => self.seeds = parse_seeds(key, v)?,
                "grid.lr_bases" => self.lr_bases = parse_list(key, v)?,
                "grid.lr_scales" => self.lr_scales = parse_list(key, v)?,
                "ft.lr" => self.ft_lr = parse(key, v)?,
                "ft.loss_positions" => self.ft_loss_positions = parse_positions(key, v)?,
                "ft.query_recording" => {
                    self.query_recording = match v {
                        "sequential" => QueryRecording::Sequential,
                        "before_any_update" => QueryRecording::BeforeAnyUpdate,
                        _ => return Err(config_err(format!("{key}: unknown value {v:?}"))),
                    }
                }
                "metrics.baseline_samples" => self.baseline_samples = parse(key, v)?,
                "metrics.normalization" => {
                    self.normalization = match v {
                        "l2" => Normalization::L2,
                        "none" => Normalization::None,
                        _ => return Err(config_err(format!("{key}: unknown value {v:?}"))),
                    }
                }
                "train.steps" => self.train.steps = parse(key, v)?,
                "train.batch_size" => self.train.batch_size = parse(key, v)?,
                "train.seq_len" => self.train.seq_len = parse(key, v)?,
                "train.lr" => self.train.lr = parse(key, v)?,
                "train.warmup" => self.train.warmup = parse(key, v)?,
                "train.end_lr" => self.train.end_lr = parse(key, v)?,
                "train.clip_norm" => self.train.clip_norm = if v == "none" { None } else { Some(parse(key, v)?) },
                "train.optimizer" => {
                    self.train.optimizer = match v {
                        "sgd" => Optimizer::Sgd,
                        "adam" => Optimizer::adam(),
                        _ => return Err(config_err(format!("{key}: expected sgd or adam, got {v:?}"))),
                    }
                }
                "train.log_every" => self.train.log_every = parse(key, v)?,
                "train.loss_positions" => self.train.loss_positions = parse_positions(key, v)?,
                "train.corpus" => corpus_file = if v == "synthetic" { None } else { Some(PathBuf::from(v)) },
                "train.n_seqs" => n_seqs = parse(key, v)?,
                "train.min_demos" => min_demos = parse(key, v)?,
                "train.max_demos" => max_demos = parse(key, v)?,
                "train.valid_fraction" => self.train.valid_fraction = parse(key, v)?,
                "eval.lengths" => self.eval_lengths = parse_list(key, v)?,
                "eval.max_tokens" => self.eval_max_tokens = parse(key, v)?,
                "dualcheck.trials" => d.trials = parse(key, v)?,
                "dualcheck.tol" => d.tol = if v == "auto" { None } else { Some(parse(key, v)?) },
                "dualcheck.d_min" => d.d_min = parse(key, v)?,
                "dualcheck.d_max" => d.d_max = parse(key, v)?,
                "dualcheck.n_min" => d.n_min = parse(key, v)?,
                "dualcheck.n_max" => d.n_max = parse(key, v)?,
                "dualcheck.m_min" => d.m_min = parse(key, v)?,
                "dualcheck.m_max" => d.m_max = parse(key, v)?,
                "seed" => self.seed = parse(key, v)?,
                "workers" => self.workers = parse(key, v)?,
                "out" => self.out_dir = PathBuf::from(v),
                _ => return Err(config_err(format!("unknown key {key:?}"))),
            }
        }
        self.task = match tsv {
            Some((path, text_column, label_column)) if !path.as_os_str().is_empty() => {
                TaskSource::Tsv { path, text_column, label_column }
            }
            Some(_) => return Err(config_err("task.text_column/label_column given without task.tsv")),
            None => TaskSource::Synthetic { kind, sizes },
        };
        self.train.corpus = match corpus_file {
            Some(p) => CorpusSource::File(p),
            None => CorpusSource::Synthetic { n_seqs, min_demos, max_demos },
        };
        if self.vocab_auto {
            self.model.vocab_size = self.auto_vocab_size();
        }
        self.validate()?;
        Ok(self)
    }

    fn auto_vocab_size(&self) -> usize {
        match (&self.train.corpus, &self.task) {
            (CorpusSource::File(_), _) => 256,
            (_, TaskSource::Synthetic { kind, sizes }) => crate::tasks::task_vocab(*kind, sizes).len(),
            (_, TaskSource::Tsv { .. }) => 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.workers == 0 {
            return Err(config_err("workers must be at least 1"));
        }
        if self.seeds.is_empty() || self.lr_bases.is_empty() || self.lr_scales.is_empty() {
            return Err(config_err("seed list and learning-rate grid must be nonempty"));
        }
        if self.n_demos > crate::tasks::MAX_DEMOS {
            return Err(config_err(format!("icl.n_demos {} exceeds {}", self.n_demos, crate::tasks::MAX_DEMOS)));
        }
        if let CorpusSource::Synthetic { min_demos, max_demos, .. } = self.train.corpus {
            if min_demos > max_demos || max_demos == 0 {
                return Err(config_err("train.min_demos must not exceed train.max_demos"));
            }
        }
        if !(0.0..1.0).contains(&self.train.valid_fraction) {
            return Err(config_err("train.valid_fraction must lie in [0, 1)"));
        }
        let d = &self.dualcheck;
        if d.d_min < 1 || d.d_min > d.d_max || d.n_min > d.n_max || d.m_min < 1 || d.m_min > d.m_max || d.tol.is_some_and(|t| !(t >= 0.0)) {
            return Err(config_err("invalid dualcheck ranges"));
        }
        Ok(())
    }

    /// Learning-rate grid `base × scale`, ascending.
    pub fn lr_grid(&self) -> Vec<f64> {
        let mut grid: Vec<f64> = self.lr_scales.iter().flat_map(|s| self.lr_bases.iter().map(move |b| b * s)).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid
    }

    /// Canonical `key=value` pairs of every setting, sorted by key.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv: BTreeMap<String, String> = self.model.to_kv().into_iter().collect();
        if self.vocab_auto {
            kv.insert("vocab_size".into(), "auto".into());
        }
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        match &self.task {
            TaskSource::Synthetic { kind, sizes } => {
                put("task.kind", kind.to_string());
                put("task.n_train", sizes.n_train.to_string());
                put("task.n_validation", sizes.n_validation.to_string());
                put("task.input_len", sizes.input_len.to_string());
                put("task.n_classes", sizes.n_classes.to_string());
                put("task.class_words", sizes.class_words.to_string());
                put("task.neutral_words", sizes.neutral_words.to_string());
                put("task.label_pool", sizes.label_pool.to_string());
                put("task.label_prompt", sizes.label_prompt.to_string());
            }
            TaskSource::Tsv { path, text_column, label_column } => {
                put("task.tsv", path.display().to_string());
                put("task.text_column", text_column.clone());
                put("task.label_column", label_column.clone());
            }
        }
        put("task.seed", self.task_seed.to_string());
        put("icl.n_demos", self.n_demos.to_string());
        put("icl.n_eval", self.n_eval.to_string());
        put("grid.seeds", join(&self.seeds));
        put("grid.lr_bases", join(&self.lr_bases));
        put("grid.lr_scales", join(&self.lr_scales));
        put("ft.lr", self.ft_lr.to_string());
        put("ft.loss_positions", positions_name(self.ft_loss_positions).into());
        put(
            "ft.query_recording",
            match self.query_recording {
                QueryRecording::Sequential => "sequential",
                QueryRecording::BeforeAnyUpdate => "before_any_update",
            }
            .into(),
        );
        put("metrics.baseline_samples", self.baseline_samples.to_string());
        put("metrics.normalization", self.normalization.to_string());
        let t = &self.train;
        put("train.steps", t.steps.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.seq_len", t.seq_len.to_string());
        put("train.lr", t.lr.to_string());
        put("train.warmup", t.warmup.to_string());
        put("train.end_lr", t.end_lr.to_string());
        put("train.clip_norm", t.clip_norm.map_or("none".into(), |c| c.to_string()));
        put(
            "train.optimizer",
            match t.optimizer {
                Optimizer::Sgd => "sgd",
                Optimizer::Adam { .. } => "adam",
            }
            .into(),
        );
        put("train.log_every", t.log_every.to_string());
        put("train.loss_positions", positions_name(t.loss_positions).into());
        match &t.corpus {
            CorpusSource::Synthetic { n_seqs, min_demos, max_demos } => {
                put("train.corpus", "synthetic".into());
                put("train.n_seqs", n_seqs.to_string());
                put("train.min_demos", min_demos.to_string());
                put("train.max_demos", max_demos.to_string());
            }
            CorpusSource::File(p) => put("train.corpus", p.display().to_string()),
        }
        put("train.valid_fraction", t.valid_fraction.to_string());
        put("eval.lengths", join(&self.eval_lengths));
        put("eval.max_tokens", self.eval_max_tokens.to_string());
        let d = &self.dualcheck;
        put("dualcheck.trials", d.trials.to_string());
        put("dualcheck.tol", d.tol.map_or("auto".into(), |t| format!("{t:e}")));
        put("dualcheck.d_min", d.d_min.to_string());
        put("dualcheck.d_max", d.d_max.to_string());
        put("dualcheck.n_min", d.n_min.to_string());
        put("dualcheck.n_max", d.n_max.to_string());
        put("dualcheck.m_min", d.m_min.to_string());
        put("dualcheck.m_max", d.m_max.to_string());
        put("seed", self.seed.to_string());
        put("workers", self.workers.to_string());
        put("out", self.out_dir.display().to_string());
        kv
    }

    /// Effective configuration as text, one `key=value` per line.
    pub fn to_text(&self) -> String {
        self.to_kv().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// SHA-256 over the canonical form, excluding settings that cannot change
    /// results (`out`, `workers`).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.to_kv() {
            if k != "out" && k != "workers" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
