//! Synthetic classification tasks, template formatting and context assembly.
//!
//! Every task shares one reserved layout: separator, prefix and prompt
//! tokens first, then a pool of single-token label words, then task words.
//! The layout depends only on the task kind and sizes, so one model can
//! serve every seed; the seed picks which label words are candidates and
//! how classes map onto them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::model::{Span, SpanKind, TokenSequence};
use crate::rng::{child_rng, Rng};
use crate::Error;

pub const SEP: u32 = 0;
pub const PREFIX: u32 = 1;
pub const PROMPT: u32 = 2;
const N_RESERVED: u32 = 3;

/// Maximum number of demonstrations per context.
pub const MAX_DEMOS: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub prefix: Vec<u32>,
    /// Tokens between the input slot and the label slot.
    pub prompt: Vec<u32>,
    /// Glue between consecutive formatted examples.
    pub separator: Vec<u32>,
}

/// The default has no prompt: the label follows the input directly. A
/// prompt token between them delays the emergence of in-context learning
/// well past a desk-scale training budget.
impl Default for Template {
    fn default() -> Self {
        Self { prefix: vec![PREFIX], prompt: Vec::new(), separator: vec![SEP] }
    }
}

impl Template {
    /// `<in> x <label> y`
    pub fn prompted() -> Self {
        Self { prompt: vec![PROMPT], ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Two classes; the label is the class holding the majority of
    /// class-marked input tokens.
    TokenMajority,
    /// `n_classes` keyword groups; the label is the group whose keyword appears.
    KeywordTopic,
    /// Three classes from comparing two marked numbers: equal, greater, smaller.
    ParityPair,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token_majority" => Ok(TaskKind::TokenMajority),
            "keyword_topic" => Ok(TaskKind::KeywordTopic),
            "parity_pair" => Ok(TaskKind::ParityPair),
            other => Err(config_err(format!("unknown task kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::TokenMajority => "token_majority",
            TaskKind::KeywordTopic => "keyword_topic",
            TaskKind::ParityPair => "parity_pair",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSizes {
    pub n_train: usize,
    pub n_validation: usize,
    pub input_len: usize,
    /// Class count for `keyword_topic`; fixed at 2 and 3 for the other kinds.
    pub n_classes: usize,
    /// Words per class (`token_majority`), per keyword group
    /// (`keyword_topic`), or number tokens (`parity_pair`).
    pub class_words: usize,
    pub neutral_words: usize,
    pub label_pool: usize,
    /// Put the `<label>` prompt token between input and label.
    pub label_prompt: bool,
}

impl Default for TaskSizes {
    fn default() -> Self {
        Self {
            n_train: 256,
            n_validation: 128,
            input_len: 5,
            n_classes: 4,
            class_words: 8,
            neutral_words: 16,
            label_pool: 16,
            label_prompt: false,
        }
    }
}

impl TaskSizes {
    pub fn template(&self) -> Template {
        if self.label_prompt {
            Template::prompted()
        } else {
            Template::default()
        }
    }

    pub fn n_classes_for(&self, kind: TaskKind) -> usize {
        match kind {
            TaskKind::TokenMajority => 2,
            TaskKind::KeywordTopic => self.n_classes,
            TaskKind::ParityPair => 3,
        }
    }

    fn validate(&self, kind: TaskKind) -> Result<()> {
        let m = self.n_classes_for(kind);
        if m < 2 {
            return Err(config_err("a task needs at least 2 classes"));
        }
        if self.label_pool < m {
            return Err(config_err(format!("label_pool {} smaller than {m} classes", self.label_pool)));
        }
        if self.input_len == 0 || self.class_words == 0 {
            return Err(config_err("input_len and class_words must be at least 1"));
        }
        if kind == TaskKind::ParityPair && (self.input_len < 2 || self.class_words < 2) {
            return Err(config_err("parity_pair needs input_len >= 2 and class_words >= 2"));
        }
        if kind == TaskKind::TokenMajority && self.neutral_words == 0 && self.input_len % 2 == 0 {
            return Err(config_err("token_majority without neutral words needs an odd input_len"));
        }
        if kind != TaskKind::TokenMajority && self.input_len > 1 && self.neutral_words == 0 {
            return Err(config_err(format!("{kind} needs neutral filler words")));
        }
        Ok(())
    }
}

/// Word-level vocabulary: token id = index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub words: Vec<String>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.words.iter().position(|w| w == word).map(|i| i as u32)
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.words.get(i as usize).map_or("<?>", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// An input with its gold class index (position in `Task::candidates`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<u32>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub vocab: Vocab,
    /// Single-token answers; class `c` is answered by `candidates[c]`.
    pub candidates: Vec<u32>,
    pub template: Template,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub seed: u64,
}

impl Task {
    pub fn n_classes(&self) -> usize {
        self.candidates.len()
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Export<'a> {
            name: &'a str,
            vocab: &'a [String],
            candidates: &'a [u32],
            template: &'a Template,
            examples: BTreeMap<&'static str, &'a [Example]>,
            seed: u64,
        }
        let mut examples = BTreeMap::new();
        examples.insert("train", self.train.as_slice());
        examples.insert("validation", self.validation.as_slice());
        Ok(serde_json::to_string_pretty(&Export {
            name: &self.name,
            vocab: &self.vocab.words,
            candidates: &self.candidates,
            template: &self.template,
            examples,
            seed: self.seed,
        })?)
    }

    pub fn format(&self, ex: &Example, with_label: bool) -> Result<TokenSequence> {
        let label = with_label.then(|| self.candidates[ex.label]);
        format_example(&self.template, &ex.input, label, self.vocab.len())
    }
}

struct Layout {
    class_base: u32,
    neutral_base: u32,
    vocab_size: u32,
}

fn layout(kind: TaskKind, sizes: &TaskSizes) -> Layout {
    let label_base = N_RESERVED;
    let class_base = label_base + sizes.label_pool as u32;
    let groups = match kind {
        TaskKind::TokenMajority => 2,
        TaskKind::KeywordTopic => sizes.n_classes,
        TaskKind::ParityPair => 1,
    };
    let neutral_base = class_base + (groups * sizes.class_words) as u32;
    Layout { class_base, neutral_base, vocab_size: neutral_base + sizes.neutral_words as u32 }
}

/// Vocabulary shared by every task of this kind and size.
pub fn task_vocab(kind: TaskKind, sizes: &TaskSizes) -> Vocab {
    let lay = layout(kind, sizes);
    let mut words = vec!["<sep>".to_string(), "<in>".to_string(), "<label>".to_string()];
    words.extend((0..sizes.label_pool).map(|i| format!("lab{i}")));
    let class_count = (lay.neutral_base - lay.class_base) as usize;
    words.extend((0..class_count).map(|i| match kind {
        TaskKind::TokenMajority => format!("{}{}", ["pos", "neg"][i / sizes.class_words], i % sizes.class_words),
        TaskKind::KeywordTopic => format!("kw{}_{}", i / sizes.class_words, i % sizes.class_words),
        TaskKind::ParityPair => format!("num{i}"),
    }));
    words.extend((0..sizes.neutral_words).map(|i| format!("w{i}")));
    debug_assert_eq!(words.len() as u32, lay.vocab_size);
    Vocab { words }
}

/// Draw an input for class `label`.
fn sample_input(kind: TaskKind, sizes: &TaskSizes, lay: &Layout, label: usize, rng: &mut Rng) -> Vec<u32> {
    let cw = sizes.class_words as u32;
    let neutral = |rng: &mut Rng| lay.neutral_base + rng.random_range(0..sizes.neutral_words as u32);
    match kind {
        TaskKind::TokenMajority => {
            // odd marked count so there is always a strict majority
            let marked = if sizes.neutral_words == 0 {
                sizes.input_len
            } else {
                let m = rng.random_range(1..=sizes.input_len);
                m - (1 - m % 2)
            };
            let majority = rng.random_range(marked / 2 + 1..=marked);
            let mut tokens: Vec<u32> = (0..sizes.input_len)
                .map(|i| {
                    let class = if i < majority {
                        Some(label)
                    } else if i < marked {
                        Some(1 - label)
                    } else {
                        None
                    };
                    match class {
                        Some(c) => lay.class_base + c as u32 * cw + rng.random_range(0..cw),
                        None => neutral(rng),
                    }
                })
                .collect();
            tokens.shuffle(rng);
            tokens
        }
        TaskKind::KeywordTopic => {
            let mut tokens: Vec<u32> = (0..sizes.input_len).map(|_| neutral(rng)).collect();
            let slot = rng.random_range(0..sizes.input_len);
            tokens[slot] = lay.class_base + label as u32 * cw + rng.random_range(0..cw);
            tokens
        }
        TaskKind::ParityPair => {
            let a = rng.random_range(0..cw);
            let b = match label {
                0 => a,
                1 if a > 0 => rng.random_range(0..a),
                2 if a + 1 < cw => rng.random_range(a + 1..cw),
                // no smaller/larger partner for this draw; redraw both
                _ => return sample_input(kind, sizes, lay, label, rng),
            };
            let mut tokens: Vec<u32> = (0..sizes.input_len).map(|_| neutral(rng)).collect();
            let slots = index::sample(rng, sizes.input_len, 2);
            let (first, second) = (slots.index(0).min(slots.index(1)), slots.index(0).max(slots.index(1)));
            tokens[first] = lay.class_base + a;
            tokens[second] = lay.class_base + b;
            tokens
        }
    }
}

/// Gold class of an input, recomputed from its tokens.
pub fn true_label(kind: TaskKind, sizes: &TaskSizes, input: &[u32]) -> Option<usize> {
    let lay = layout(kind, sizes);
    let cw = sizes.class_words as u32;
    let in_class = |t: u32| (lay.class_base..lay.neutral_base).contains(&t).then(|| ((t - lay.class_base) / cw) as usize);
    match kind {
        TaskKind::TokenMajority => {
            let mut counts = [0usize; 2];
            input.iter().filter_map(|&t| in_class(t)).for_each(|c| counts[c] += 1);
            match counts[0].cmp(&counts[1]) {
                std::cmp::Ordering::Greater => Some(0),
                std::cmp::Ordering::Less => Some(1),
                std::cmp::Ordering::Equal => None,
            }
        }
        TaskKind::KeywordTopic => {
            let groups: BTreeSet<usize> = input.iter().filter_map(|&t| in_class(t)).collect();
            (groups.len() == 1).then(|| *groups.iter().next().unwrap())
        }
        TaskKind::ParityPair => {
            let nums: Vec<u32> = input.iter().filter(|&&t| in_class(t).is_some()).map(|&t| t - lay.class_base).collect();
            match nums.as_slice() {
                [a, b] => Some(match a.cmp(b) {
                    std::cmp::Ordering::Equal => 0,
                    std::cmp::Ordering::Greater => 1,
                    std::cmp::Ordering::Less => 2,
                }),
                _ => None,
            }
        }
    }
}

/// Candidate label tokens for `seed`: distinct draws from the label pool,
/// in class order.
pub fn draw_candidates(n_classes: usize, label_pool: usize, rng: &mut Rng) -> Vec<u32> {
    index::sample(rng, label_pool, n_classes).into_iter().map(|i| N_RESERVED + i as u32).collect()
}

fn sample_example(kind: TaskKind, sizes: &TaskSizes, lay: &Layout, rng: &mut Rng) -> Example {
    let label = rng.random_range(0..sizes.n_classes_for(kind));
    Example { input: sample_input(kind, sizes, lay, label, rng), label }
}

pub fn make_task(kind: TaskKind, sizes: &TaskSizes, seed: u64) -> Result<Task> {
    sizes.validate(kind)?;
    let lay = layout(kind, sizes);
    let mut rng = child_rng(seed, &format!("task.{kind}"));
    let candidates = draw_candidates(sizes.n_classes_for(kind), sizes.label_pool, &mut rng);
    let train: Vec<Example> = (0..sizes.n_train).map(|_| sample_example(kind, sizes, &lay, &mut rng)).collect();
    let seen: HashSet<&Vec<u32>> = train.iter().map(|e| &e.input).collect();
    let mut validation = Vec::with_capacity(sizes.n_validation);
    let mut attempts = 0usize;
    while validation.len() < sizes.n_validation {
        attempts += 1;
        if attempts > 100 * (sizes.n_validation + 1) {
            return Err(config_err(format!(
                "input space too small for {} validation examples disjoint from the train pool",
                sizes.n_validation
            )));
        }
        let ex = sample_example(kind, sizes, &lay, &mut rng);
        if !seen.contains(&ex.input) {
            validation.push(ex);
        }
    }
    Ok(Task {
        name: format!("{kind}-{seed}"),
        vocab: task_vocab(kind, sizes),
        candidates,
        template: sizes.template(),
        train,
        validation,
        seed,
    })
}

/// `prefix + x + prompt (+ label)`, as a single span.
pub fn format_example(template: &Template, x: &[u32], label: Option<u32>, vocab_size: usize) -> Result<TokenSequence> {
    let mut ids = template.prefix.clone();
    ids.extend_from_slice(x);
    ids.extend_from_slice(&template.prompt);
    let mut label_positions = Vec::new();
    if let Some(y) = label {
        label_positions.push(ids.len());
        ids.push(y);
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab_size) {
        return Err(Error::Vocab { id, vocab_size });
    }
    let kind = if label.is_some() { SpanKind::Demonstration } else { SpanKind::Query };
    let spans = vec![Span { kind, start: 0, content_end: ids.len(), end: ids.len() }];
    Ok(TokenSequence { ids, spans, label_positions })
}

/// Inverse of [`format_example`] for a single formatted example. Without a
/// prompt the label cannot be told apart from the input, so the caller says
/// whether one is present.
pub fn strip_template(template: &Template, ids: &[u32], labelled: bool) -> Result<(Vec<u32>, Option<u32>)> {
    let rest = ids
        .strip_prefix(template.prefix.as_slice())
        .ok_or_else(|| config_err("sequence does not start with the template prefix"))?;
    let (body, label) = match (labelled, rest.split_last()) {
        (true, Some((&y, body))) => (body, Some(y)),
        (true, None) => return Err(config_err("labelled sequence has no label")),
        (false, _) => (rest, None),
    };
    let x = body
        .strip_suffix(template.prompt.as_slice())
        .ok_or_else(|| config_err("sequence does not contain the template prompt"))?;
    Ok((x.to_vec(), label))
}

/// Demonstrations in prompt order followed by the query with a blank label.
/// Each demonstration span owns the separator that follows it.
pub fn build_context(task: &Task, demos: &[Example], query: &[u32], max_seq_len: usize) -> Result<TokenSequence> {
    let mut seq = TokenSequence::default();
    for demo in demos {
        let one = task.format(demo, true)?;
        let start = seq.ids.len();
        seq.label_positions.extend(one.label_positions.iter().map(|p| p + start));
        seq.ids.extend_from_slice(&one.ids);
        let content_end = seq.ids.len();
        seq.ids.extend_from_slice(&task.template.separator);
        seq.spans.push(Span { kind: SpanKind::Demonstration, start, content_end, end: seq.ids.len() });
    }
    let q = format_example(&task.template, query, None, task.vocab.len())?;
    let start = seq.ids.len();
    seq.ids.extend_from_slice(&q.ids);
    seq.spans.push(Span { kind: SpanKind::Query, start, content_end: seq.ids.len(), end: seq.ids.len() });
    if seq.ids.len() > max_seq_len {
        return Err(Error::Length(format!(
            "context with {} demonstrations needs {} tokens, max_seq_len is {max_seq_len}",
            demos.len(),
            seq.ids.len()
        )));
    }
    Ok(seq)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoSet {
    pub examples: Vec<Example>,
    pub seed: u64,
}

/// `n` demonstrations drawn uniformly without replacement from the train pool.
pub fn sample_demos(task: &Task, n: usize, seed: u64) -> Result<DemoSet> {
    if n > MAX_DEMOS {
        return Err(config_err(format!("{n} demonstrations exceed the maximum of {MAX_DEMOS}")));
    }
    if n > task.train.len() {
        return Err(config_err(format!("{n} demonstrations requested from a pool of {}", task.train.len())));
    }
    let mut rng = child_rng(seed, "demos");
    let picks = index::sample(&mut rng, task.train.len(), n);
    Ok(DemoSet { examples: picks.into_iter().map(|i| task.train[i].clone()).collect(), seed })
}

/// Pretraining sequences for in-context learning: each holds `n_demos`
/// labelled examples of one task kind under a freshly drawn label mapping,
/// so the only way to predict a label is to read the mapping off the context.
pub fn icl_corpus(kind: TaskKind, sizes: &TaskSizes, n_seqs: usize, n_demos: std::ops::RangeInclusive<usize>, seed: u64) -> Result<Vec<TokenSequence>> {
    sizes.validate(kind)?;
    let lay = layout(kind, sizes);
    let template = sizes.template();
    let mut rng = child_rng(seed, &format!("icl_corpus.{kind}"));
    let n_classes = sizes.n_classes_for(kind);
    (0..n_seqs)
        .map(|_| {
            let candidates = draw_candidates(n_classes, sizes.label_pool, &mut rng);
            let n = rng.random_range(n_demos.clone());
            let mut seq = TokenSequence::default();
            for _ in 0..n {
                let ex = sample_example(kind, sizes, &lay, &mut rng);
                let one = format_example(&template, &ex.input, Some(candidates[ex.label]), lay.vocab_size as usize)?;
                let start = seq.ids.len();
                seq.label_positions.extend(one.label_positions.iter().map(|p| p + start));
                seq.ids.extend_from_slice(&one.ids);
                let content_end = seq.ids.len();
                seq.ids.extend_from_slice(&template.separator);
                seq.spans.push(Span { kind: SpanKind::Demonstration, start, content_end, end: seq.ids.len() });
            }
            Ok(seq)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    /// 1-based line number in the file, header included.
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ingested {
    pub task: Task,
    pub skipped: Vec<SkippedRow>,
}

/// Read a tab-separated file with a header row into a task. Text is split
/// on whitespace; each distinct label becomes one reserved token. Rows that
/// are not valid UTF-8, have the wrong number of fields, contain control
/// characters or have an empty text or label are skipped and reported.
pub fn ingest_tsv(path: &Path, text_column: &str, label_column: &str, validation_fraction: f64, seed: u64) -> Result<Ingested> {
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(config_err(format!("validation_fraction {validation_fraction} outside [0, 1)")));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::format(path, "empty file"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(bytes.as_slice());
    let headers = reader.byte_headers()?.clone();
    let header: Vec<String> = headers.iter().map(|h| String::from_utf8_lossy(h).trim().to_string()).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(path, format!("missing column {name:?}")))
    };
    let (text_idx, label_idx) = (col(text_column)?, col(label_column)?);

    let mut rows: Vec<(Vec<String>, String)> = Vec::new();
    let mut skipped = Vec::new();
    for record in reader.byte_records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let reason = if record.len() != header.len() {
            Some(format!("{} fields, header has {}", record.len(), header.len()))
        } else {
            match (std::str::from_utf8(&record[text_idx]), std::str::from_utf8(&record[label_idx])) {
                (Ok(text), Ok(label)) => {
                    if text.chars().chain(label.chars()).any(|c| c.is_control() && c != '\t') {
                        Some("control character".to_string())
                    } else if text.trim().is_empty() || label.trim().is_empty() {
                        Some("empty text or label".to_string())
                    } else {
                        rows.push((text.split_whitespace().map(str::to_string).collect(), label.trim().to_string()));
                        None
                    }
                }
                _ => Some("invalid UTF-8".to_string()),
            }
        };
        if let Some(reason) = reason {
            skipped.push(SkippedRow { line, reason });
        }
    }
    if rows.is_empty() {
        return Err(Error::format(path, "no usable rows"));
    }

    let labels: Vec<String> = rows.iter().map(|(_, l)| l.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let words: Vec<String> = rows.iter().flat_map(|(t, _)| t.iter().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut vocab = vec!["<sep>".to_string(), "<in>".to_string(), "<label>".to_string()];
    vocab.extend(labels.iter().map(|l| format!("<label:{l}>")));
    vocab.extend(words.iter().cloned());
    let word_base = N_RESERVED as usize + labels.len();
    let word_id: BTreeMap<&str, u32> = words.iter().enumerate().map(|(i, w)| (w.as_str(), (word_base + i) as u32)).collect();
    let examples: Vec<Example> = rows
        .iter()
        .map(|(text, label)| Example {
            input: text.iter().map(|w| word_id[w.as_str()]).collect(),
            label: labels.binary_search(label).expect("label collected above"),
        })
        .collect();

    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut child_rng(seed, "ingest.split"));
    let n_val = if examples.len() < 2 { 0 } else { ((examples.len() as f64 * validation_fraction).round() as usize).clamp(1, examples.len() - 1) };
    let n_val = if validation_fraction == 0.0 { 0 } else { n_val };
    let validation = order[..n_val].iter().map(|&i| examples[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| examples[i].clone()).collect();
    let name = path.file_stem().map_or("tsv".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Ingested {
        task: Task {
            name,
            vocab: Vocab { words: vocab },
            candidates: (0..labels.len()).map(|i| N_RESERVED + i as u32).collect(),
            template: Template::default(),
            train,
            validation,
            seed,
        },
        skipped,
    })
}
