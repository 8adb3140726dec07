//! The subcommands behind the CLI. Each one writes its outputs into the
//! configured output directory and returns a short summary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::attention::HeadParams;
use crate::dual_form::{attention_dual_check, gd_dual_check, EquivalenceReport, GdLinearInstance};
use crate::error::{config_err, Result};
use crate::model::{
    load_checkpoint, perplexity, save_checkpoint, train_lm, Corpus, LrSchedule, ModelConfig, ModelParams, TrainHyper,
};
use crate::rng::{child_rng, derive_seed};
use crate::tasks::{icl_corpus, ingest_tsv, make_task, sample_demos, Task};
use crate::tensor::{random_matrix, random_vector, Distribution, Precision, Real};
use crate::Error;

use super::config::{CorpusSource, ExperimentConfig, TaskSource};
use super::pipeline::{compare, finetune_on_demos, grid_search, icl_accuracy, with_workers, Comparison, GridResult};
use super::record::{file_hash, fmt4, fmt_opt, OutputDir, RunRecord, Table, TOOL_VERSION};

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Dualcheck,
    TrainLm,
    EvalPpl { checkpoints: Vec<PathBuf> },
    EvalIcl { checkpoints: Vec<PathBuf> },
    Finetune { checkpoint: PathBuf },
    Compare { checkpoint: PathBuf },
    Gridsearch { checkpoint: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Dualcheck => "dualcheck",
            Command::TrainLm => "train-lm",
            Command::EvalPpl { .. } => "eval-ppl",
            Command::EvalIcl { .. } => "eval-icl",
            Command::Finetune { .. } => "finetune",
            Command::Compare { .. } => "compare",
            Command::Gridsearch { .. } => "gridsearch",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    /// False when a check failed (dualcheck).
    pub passed: bool,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

pub fn run(command: &Command, exp: &ExperimentConfig) -> Result<Outcome> {
    exp.validate()?;
    with_workers(exp.workers, || match exp.model.precision {
        Precision::Single => run_typed::<f32>(command, exp),
        Precision::Double => run_typed::<f64>(command, exp),
    })?
}

struct Ctx<'a> {
    exp: &'a ExperimentConfig,
    out: OutputDir,
    started: Instant,
    command: &'static str,
}

impl Ctx<'_> {
    fn finish(mut self, checkpoint_hash: Option<String>, results: serde_json::Value, passed: bool, summary: String) -> Result<Outcome> {
        let record = RunRecord {
            tool_version: TOOL_VERSION.to_string(),
            command: self.command.to_string(),
            config_hash: self.out.config_hash().to_string(),
            checkpoint_hash,
            seed: self.exp.seed,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            config: self.exp.to_kv(),
            results,
        };
        self.out.write_record(&record)?;
        Ok(Outcome { passed, summary, files: self.out.written().to_vec() })
    }
}

fn run_typed<T: Real>(command: &Command, exp: &ExperimentConfig) -> Result<Outcome> {
    let ctx = Ctx { exp, out: OutputDir::create(exp)?, started: Instant::now(), command: command.name() };
    match command {
        Command::Dualcheck => dualcheck::<T>(ctx),
        Command::TrainLm => train::<T>(ctx),
        Command::EvalPpl { checkpoints } => eval_ppl::<T>(ctx, checkpoints),
        Command::EvalIcl { checkpoints } => eval_icl::<T>(ctx, checkpoints),
        Command::Finetune { checkpoint } => finetune::<T>(ctx, checkpoint),
        Command::Compare { checkpoint } => compare_cmd::<T>(ctx, checkpoint),
        Command::Gridsearch { checkpoint } => gridsearch::<T>(ctx, checkpoint),
    }
}

// ---------------------------------------------------------------- dualcheck

fn scaled(d: usize) -> Distribution {
    Distribution::Gaussian { mean: 0.0, std: 1.0 / (d as f64).sqrt() }
}

/// One random GD instance and one random attention instance per trial.
pub fn dualcheck_reports<T: Real>(exp: &ExperimentConfig) -> Result<Vec<EquivalenceReport>> {
    use rand::Rng as _;
    let d = exp.dualcheck;
    let tol = d.tol.unwrap_or(match T::PRECISION {
        Precision::Double => 1e-9,
        Precision::Single => 1e-4,
    });
    let mut reports = Vec::with_capacity(2 * d.trials);
    for trial in 0..d.trials {
        let mut rng = child_rng(exp.seed, &format!("dualcheck.{trial}"));
        let d_in = rng.random_range(d.d_min..=d.d_max);
        let d_out = rng.random_range(d.d_min..=d.d_max);
        let n = rng.random_range(d.n_min..=d.n_max);
        let m = rng.random_range(d.m_min..=d.m_max);
        let s = derive_seed(exp.seed, &format!("dualcheck.{trial}.values"));
        let col = |i: u64, dim: usize| random_vector::<T>(dim, scaled(dim), s.wrapping_add(i));

        let w0 = random_matrix::<T>(d_out, d_in, scaled(d_in), s)?;
        let xs = (0..n).map(|i| col(10 + i as u64, d_in)).collect::<Result<Vec<_>>>()?;
        let es = (0..n).map(|i| col(1000 + i as u64, d_out)).collect::<Result<Vec<_>>>()?;
        let x = col(1, d_in)?;
        reports.push(gd_dual_check(&GdLinearInstance::new(w0, xs, es)?, &x, tol)?);

        let head = HeadParams::new(
            random_matrix(d_out, d_in, scaled(d_in), s.wrapping_add(2))?,
            random_matrix(d_out, d_in, scaled(d_in), s.wrapping_add(3))?,
            random_matrix(d_out, d_in, scaled(d_in), s.wrapping_add(4))?,
        )?;
        let demos = random_matrix::<T>(d_in, n, Distribution::standard_normal(), s.wrapping_add(5))?;
        let queries = random_matrix::<T>(d_in, m, Distribution::standard_normal(), s.wrapping_add(6))?;
        let q = random_vector::<T>(d_out, Distribution::standard_normal(), s.wrapping_add(7))?;
        reports.push(attention_dual_check(&head, &demos, &queries, &q, tol)?);
    }
    Ok(reports)
}

fn dualcheck<T: Real>(mut ctx: Ctx) -> Result<Outcome> {
    let reports = dualcheck_reports::<T>(ctx.exp)?;
    let mut table = Table::new("", &["check_name", "shape", "n_demos", "tol", "max_abs_diff", "pass"]);
    for r in &reports {
        table.push(vec![
            r.check_name.clone(),
            r.shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x"),
            r.n_demos.to_string(),
            format!("{:e}", r.tol),
            format!("{:e}", r.max_abs_diff),
            r.pass.to_string(),
        ]);
    }
    ctx.out.write_csv("dualcheck.csv", &table)?;
    let failures = reports.iter().filter(|r| !r.pass).count();
    let worst = reports.iter().map(|r| r.max_abs_diff).fold(0.0, f64::max);
    let mut summary = Table::new("dual-form checks", &["checks", "failures", "worst_abs_diff"]);
    summary.push(vec![reports.len().to_string(), failures.to_string(), format!("{worst:e}")]);
    ctx.out.write_text("dualcheck.txt", &summary)?;
    let text = summary.render();
    ctx.finish(None, json!({ "checks": reports.len(), "failures": failures, "worst_abs_diff": worst }), failures == 0, text)
}

// ---------------------------------------------------------------- corpora

struct Splits {
    train: Corpus,
    /// Token streams for perplexity, capped at `eval.max_tokens`.
    train_eval: Vec<u32>,
    valid: Vec<u32>,
}

fn flatten(seqs: &[crate::model::TokenSequence], cap: usize) -> Vec<u32> {
    seqs.iter().flat_map(|s| s.ids.iter().copied()).take(cap).collect()
}

fn synthetic_kind(exp: &ExperimentConfig) -> Result<(crate::tasks::TaskKind, crate::tasks::TaskSizes)> {
    match &exp.task {
        TaskSource::Synthetic { kind, sizes } => Ok((*kind, *sizes)),
        TaskSource::Tsv { .. } => Err(config_err("the synthetic corpus needs a synthetic task kind")),
    }
}

fn load_splits(exp: &ExperimentConfig) -> Result<Splits> {
    let cap = exp.eval_max_tokens;
    match &exp.train.corpus {
        CorpusSource::Synthetic { n_seqs, min_demos, max_demos } => {
            let (kind, sizes) = synthetic_kind(exp)?;
            let n_valid = ((*n_seqs as f64) * exp.train.valid_fraction).ceil() as usize;
            let train = icl_corpus(kind, &sizes, *n_seqs, *min_demos..=*max_demos, derive_seed(exp.seed, "corpus.train"))?;
            let valid = icl_corpus(kind, &sizes, n_valid.max(1), *min_demos..=*max_demos, derive_seed(exp.seed, "corpus.valid"))?;
            Ok(Splits { train_eval: flatten(&train, cap), valid: flatten(&valid, cap), train: Corpus::Sequences(train) })
        }
        CorpusSource::File(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let tokens: Vec<u32> = bytes.into_iter().map(u32::from).collect();
            let n_valid = ((tokens.len() as f64) * exp.train.valid_fraction).round() as usize;
            let (train, valid) = tokens.split_at(tokens.len() - n_valid);
            Ok(Splits {
                train_eval: train.iter().copied().take(cap).collect(),
                valid: valid.iter().copied().take(cap).collect(),
                train: Corpus::Stream(train.to_vec()),
            })
        }
    }
}

fn hyper(exp: &ExperimentConfig) -> TrainHyper {
    let t = &exp.train;
    TrainHyper {
        steps: t.steps,
        batch_size: t.batch_size,
        seq_len: t.seq_len,
        lr: LrSchedule { peak: t.lr, warmup_steps: t.warmup, total_steps: t.steps, end: t.end_lr, power: 1.0 },
        clip_norm: t.clip_norm,
        optimizer: t.optimizer,
        log_every: t.log_every,
        loss_positions: t.loss_positions,
    }
}

// ---------------------------------------------------------------- train-lm

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

fn train<T: Real>(mut ctx: Ctx) -> Result<Outcome> {
    let exp = ctx.exp;
    let splits = load_splits(exp).map_err(|e| e.in_stage("corpus"))?;
    let params = ModelParams::<T>::init(&exp.model, exp.seed)?;
    let outcome = train_lm(params, &exp.model, &splits.train, &hyper(exp), exp.seed).map_err(|e| e.in_stage("train"))?;
    let ckpt = ctx.out.path(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &exp.model, &outcome.params)?;
    ctx.out.note(ckpt.clone());
    let mut curve = Table::new("", &["step", "loss", "lr"]);
    for p in &outcome.curve {
        curve.push(vec![p.step.to_string(), format!("{:.6}", p.loss), format!("{:e}", p.lr)]);
    }
    ctx.out.write_csv("loss_curve.csv", &curve)?;
    let last = outcome.curve.last().map_or(f64::NAN, |p| p.loss);
    let hash = file_hash(&ckpt)?;
    let summary = format!("trained {} steps, final loss {last:.4}, checkpoint {}\n", exp.train.steps, ckpt.display());
    ctx.finish(Some(hash), json!({ "final_loss": last, "steps": exp.train.steps }), true, summary)
}

// ---------------------------------------------------------------- eval-ppl

fn model_label(path: &Path, config: &ModelConfig) -> String {
    let stem = path.parent().and_then(|p| p.file_name()).or(path.file_stem()).map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let kind = match config.attention {
        crate::attention::AttentionVariant::Standard => "vanilla".to_string(),
        crate::attention::AttentionVariant::RelaxedLinear => "relaxed".to_string(),
        crate::attention::AttentionVariant::Momentum { eta } => format!("moattn(eta={eta})"),
    };
    format!("{stem} [{kind}]")
}

fn load<T: Real>(path: &Path) -> Result<(ModelConfig, ModelParams<T>, String)> {
    let (config, params) = load_checkpoint::<T>(path).map_err(|e| e.in_stage("checkpoint"))?;
    Ok((config, params, file_hash(path)?))
}

fn joined_hashes(hashes: &[String]) -> Option<String> {
    (!hashes.is_empty()).then(|| hashes.join(","))
}

/// Perplexity at the training length and at every `eval.lengths` entry.
pub fn perplexity_row<T: Real>(params: &ModelParams<T>, config: &ModelConfig, exp: &ExperimentConfig, splits_train: &[u32], valid: &[u32]) -> Result<Vec<f64>> {
    let mut row = vec![perplexity(params, config, splits_train, exp.train.seq_len.min(config.max_seq_len))?];
    for &len in &exp.eval_lengths {
        row.push(perplexity(params, config, valid, len)?);
    }
    Ok(row)
}

fn eval_ppl<T: Real>(mut ctx: Ctx, checkpoints: &[PathBuf]) -> Result<Outcome> {
    if checkpoints.is_empty() {
        return Err(config_err("eval-ppl needs at least one checkpoint"));
    }
    let exp = ctx.exp;
    let splits = load_splits(exp).map_err(|e| e.in_stage("corpus"))?;
    let mut columns = vec!["model".to_string(), format!("Train_{}", exp.train.seq_len)];
    columns.extend(exp.eval_lengths.iter().map(|l| format!("Valid_{l}")));
    let mut table = Table { title: "perplexity".into(), columns, rows: Vec::new() };
    let mut hashes = Vec::new();
    let mut results = Vec::new();
    for path in checkpoints {
        let (config, params, hash) = load::<T>(path)?;
        let row = perplexity_row(&params, &config, exp, &splits.train_eval, &splits.valid).map_err(|e| e.in_stage("perplexity"))?;
        let label = model_label(path, &config);
        let mut cells = vec![label.clone()];
        cells.extend(row.iter().map(|v| fmt4(*v)));
        table.push(cells);
        results.push(json!({ "model": label, "checkpoint_hash": hash, "perplexity": row }));
        hashes.push(hash);
    }
    ctx.out.write_table("perplexity", &table)?;
    let summary = table.render();
    ctx.finish(joined_hashes(&hashes), json!(results), true, summary)
}

// ---------------------------------------------------------------- tasks

pub fn load_task(exp: &ExperimentConfig) -> Result<Task> {
    match &exp.task {
        TaskSource::Synthetic { kind, sizes } => make_task(*kind, sizes, exp.task_seed),
        TaskSource::Tsv { path, text_column, label_column } => {
            let ingested = ingest_tsv(path, text_column, label_column, 0.2, exp.task_seed)?;
            Ok(ingested.task)
        }
    }
}

fn check_vocab(task: &Task, config: &ModelConfig) -> Result<()> {
    if task.vocab.len() > config.vocab_size {
        return Err(Error::Vocab { id: task.vocab.len() as u32 - 1, vocab_size: config.vocab_size });
    }
    Ok(())
}

// ---------------------------------------------------------------- eval-icl

#[derive(Serialize)]
struct IclRow {
    model: String,
    seed: u64,
    zsl: f64,
    icl: f64,
}

fn eval_icl<T: Real>(mut ctx: Ctx, checkpoints: &[PathBuf]) -> Result<Outcome> {
    if checkpoints.is_empty() {
        return Err(config_err("eval-icl needs at least one checkpoint"));
    }
    let exp = ctx.exp;
    let task = load_task(exp).map_err(|e| e.in_stage("task"))?;
    let mut detail = Table::new("", &["model", "seed", "zsl_acc", "icl_acc"]);
    let mut table = Table::new("ICL accuracy", &["model", "zsl_acc", "icl_acc", "n_seeds"]);
    let mut rows = Vec::new();
    let mut hashes = Vec::new();
    for path in checkpoints {
        let (config, params, hash) = load::<T>(path)?;
        check_vocab(&task, &config)?;
        let label = model_label(path, &config);
        let zsl = icl_accuracy(&params, &config, &task, &[], exp.n_eval).map_err(|e| e.in_stage("zsl"))?;
        let mut icl_sum = 0.0;
        for &seed in &exp.seeds {
            let demos = sample_demos(&task, exp.n_demos, seed)?;
            let icl = icl_accuracy(&params, &config, &task, &demos.examples, exp.n_eval).map_err(|e| e.in_stage("icl"))?;
            icl_sum += icl;
            detail.push(vec![label.clone(), seed.to_string(), fmt4(zsl), fmt4(icl)]);
            rows.push(IclRow { model: label.clone(), seed, zsl, icl });
        }
        let n = exp.seeds.len();
        table.push(vec![label, fmt4(zsl), fmt4(icl_sum / n as f64), n.to_string()]);
        hashes.push(hash);
    }
    ctx.out.write_csv("icl_accuracy_per_seed.csv", &detail)?;
    ctx.out.write_table("icl_accuracy", &table)?;
    let summary = table.render();
    ctx.finish(joined_hashes(&hashes), serde_json::to_value(&rows)?, true, summary)
}

// ---------------------------------------------------------------- finetune

fn finetune<T: Real>(mut ctx: Ctx, checkpoint: &Path) -> Result<Outcome> {
    let exp = ctx.exp;
    let (config, params, hash) = load::<T>(checkpoint)?;
    let task = load_task(exp).map_err(|e| e.in_stage("task"))?;
    check_vocab(&task, &config)?;
    let demos = sample_demos(&task, exp.n_demos, exp.seed)?;
    let result = finetune_on_demos(&params, &config, &task, &demos.examples, exp, exp.ft_lr).map_err(|e| e.in_stage("finetune"))?;
    let ckpt = ctx.out.path("finetuned.bin");
    save_checkpoint(&ckpt, &config, &result.params)?;
    ctx.out.note(ckpt);
    let norms: Vec<serde_json::Value> =
        result.per_layer_delta_norms().iter().map(|(k, v)| json!({ "w_k": k, "w_v": v })).collect();
    let summary_json = json!({
        "per_layer_delta_norms": norms,
        "losses": result.losses,
        "lr": exp.ft_lr,
        "seed": exp.seed,
    });
    ctx.out.write_json("finetune.json", &summary_json)?;
    let mean_loss = result.losses.iter().sum::<f64>() / result.losses.len().max(1) as f64;
    let summary = format!("finetuned on {} demonstrations at lr {}, mean loss {mean_loss:.4}\n", result.losses.len(), exp.ft_lr);
    ctx.finish(Some(hash), summary_json, true, summary)
}

// ---------------------------------------------------------------- gridsearch

fn grid_table(grid: &GridResult) -> Table {
    let mut t = Table::new("grid search", &["kind", "seed", "lr", "accuracy"]);
    for p in &grid.points {
        t.push(vec![p.kind.to_string(), p.seed.to_string(), p.lr.map_or("-".into(), |l| format!("{l:e}")), fmt4(p.accuracy)]);
    }
    t
}

fn chosen_table(grid: &GridResult) -> Table {
    let mut t = Table::new("selected", &["seed", "lr", "icl_acc", "ft_acc"]);
    t.push(vec![grid.best_seed.to_string(), format!("{:e}", grid.best_lr), fmt4(grid.best_icl_accuracy), fmt4(grid.best_ft_accuracy)]);
    t
}

fn gridsearch<T: Real>(mut ctx: Ctx, checkpoint: &Path) -> Result<Outcome> {
    let exp = ctx.exp;
    let (config, params, hash) = load::<T>(checkpoint)?;
    let task = load_task(exp).map_err(|e| e.in_stage("task"))?;
    check_vocab(&task, &config)?;
    let grid = grid_search(&params, &config, &task, exp).map_err(|e| e.in_stage("gridsearch"))?;
    ctx.out.write_table("grid", &grid_table(&grid))?;
    let chosen = chosen_table(&grid);
    ctx.out.write_table("selected", &chosen)?;
    let summary = chosen.render();
    ctx.finish(Some(hash), serde_json::to_value(&grid)?, true, summary)
}

// ---------------------------------------------------------------- compare

/// Accuracy, Rec2FTP, SimAOU, SimAM and Kendall tables for one comparison.
pub fn comparison_tables(c: &Comparison) -> Vec<(&'static str, Table)> {
    let mut acc = Table::new("accuracy", &["task", "zsl", "ft", "icl"]);
    acc.push(vec![c.task.clone(), fmt4(c.accuracy.zsl), fmt4(c.accuracy.ft), fmt4(c.accuracy.icl)]);
    let mut rec = Table::new("rec2ftp", &["task", "rec2ftp", "n_examples"]);
    rec.push(vec![c.task.clone(), fmt_opt(c.rec2ftp), c.examples.len().to_string()]);

    let layered = |title: &str, metrics: &[(&str, &str, bool)]| {
        let mut cols = vec!["layer"];
        cols.extend(metrics.iter().map(|m| m.1));
        let mut t = Table::new(title, &cols);
        let reports: Vec<_> = metrics.iter().map(|m| (c.report(m.0), m.2)).collect();
        let n_layers = reports.iter().filter_map(|r| r.0).map(|r| r.per_layer.len()).max().unwrap_or(0);
        for l in 0..n_layers {
            let mut row = vec![l.to_string()];
            for (r, baseline) in &reports {
                row.push(match (r, baseline) {
                    (Some(r), false) => fmt4(r.per_layer[l]),
                    (Some(r), true) => {
                        let b: Vec<f64> = r.baseline_per_example.iter().map(|e| e[l]).collect();
                        fmt4(crate::tensor::compensated_mean(&b).unwrap_or(0.0))
                    }
                    (None, _) => "n/a".into(),
                });
            }
            t.push(row);
        }
        let mut row = vec!["avg".to_string()];
        for (r, baseline) in &reports {
            row.push(match r {
                Some(r) => fmt_opt(if *baseline { r.baseline_mean } else { r.mean }),
                None => "n/a".into(),
            });
        }
        t.push(row);
        t
    };
    vec![
        ("accuracy", acc),
        ("rec2ftp", rec),
        ("simaou", layered("simaou", &[("simaou", "ft_delta", false), ("simaou", "random_delta", true)])),
        ("simam", layered("simam", &[("simam_before", "before_ft", false), ("simam_after", "after_ft", false)])),
        ("kendall", layered("kendall", &[("kendall", "icl_vs_ft", false), ("kendall", "icl_vs_random", true)])),
    ]
}

fn compare_cmd<T: Real>(mut ctx: Ctx, checkpoint: &Path) -> Result<Outcome> {
    let exp = ctx.exp;
    let (config, params, hash) = load::<T>(checkpoint)?;
    let task = load_task(exp).map_err(|e| e.in_stage("task"))?;
    check_vocab(&task, &config)?;
    let grid = grid_search(&params, &config, &task, exp).map_err(|e| e.in_stage("gridsearch"))?;
    ctx.out.write_table("grid", &grid_table(&grid))?;
    let demos = sample_demos(&task, exp.n_demos, grid.best_seed)?;
    let label = model_label(checkpoint, &config);
    let c = compare(&params, &config, &task, &demos.examples, grid.best_lr, grid.best_seed, &label, exp)
        .map_err(|e| e.in_stage("compare"))?;

    let mut preds = Table::new("", &["example", "gold", "zsl", "ft", "icl"]);
    for e in &c.examples {
        preds.push(vec![e.index.to_string(), e.gold.to_string(), e.zsl.to_string(), e.ft.to_string(), e.icl.to_string()]);
    }
    ctx.out.write_csv("predictions.csv", &preds)?;
    let mut per_example = Table::new("", &["metric", "example", "layer", "value", "baseline"]);
    for r in &c.reports {
        for (e, layers) in r.per_example.iter().enumerate() {
            for (l, v) in layers.iter().enumerate() {
                let b = r.baseline_per_example.get(e).and_then(|b| b.get(l)).map_or(String::new(), |b| b.to_string());
                per_example.push(vec![r.metric.clone(), e.to_string(), l.to_string(), v.to_string(), b]);
            }
        }
    }
    ctx.out.write_csv("metrics_per_example.csv", &per_example)?;
    let mut summary = String::new();
    for (stem, table) in comparison_tables(&c) {
        ctx.out.write_table(stem, &table)?;
        summary.push_str(&table.render());
        summary.push('\n');
    }
    ctx.out.write_json("metrics.json", &c.reports)?;
    let results = json!({ "selected": { "seed": grid.best_seed, "lr": grid.best_lr }, "comparison": c });
    ctx.finish(Some(hash), results, true, summary)
}
