//! ZSL / ICL / restricted-FT evaluation on a task, the comparison metrics and
//! the seed and learning-rate grid search.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config_err, Result};
use crate::finetune::{finetune_kv, FinetuneResult, FinetuneSpec};
use crate::metrics::{
    ft_attention_map, icl_attention_map, kendall, kendall_random_baseline, rec2ftp, simam, simaou,
    simaou_random_baseline, MetricReport, PredictionTriple,
};
use crate::model::{answer_scores, forward, ModelConfig, ModelParams, TokenSequence};
use crate::rng::derive_seed;
use crate::tasks::{build_context, sample_demos, Example, Task};
use crate::tensor::Real;
use crate::Error;

use super::config::ExperimentConfig;

/// Run `f` on a dedicated pool of `workers` threads.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| config_err(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

fn eval_set<'a>(task: &'a Task, n_eval: usize) -> Result<&'a [Example]> {
    if task.validation.is_empty() {
        return Err(config_err(format!("task {} has an empty validation split", task.name)));
    }
    Ok(&task.validation[..n_eval.min(task.validation.len())])
}

fn predict<T: Real>(params: &ModelParams<T>, config: &ModelConfig, task: &Task, ctx: &TokenSequence) -> Result<usize> {
    let out = forward(params, config, ctx, false)?;
    Ok(answer_scores(&out.logits, &task.candidates)?.predicted)
}

fn accuracy(pred: &[usize], examples: &[Example]) -> f64 {
    let hits = pred.iter().zip(examples).filter(|(p, e)| **p == e.label).count();
    hits as f64 / examples.len() as f64
}

/// Predictions for every evaluation example with `demos` in context.
pub fn icl_predictions<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    task: &Task,
    demos: &[Example],
    n_eval: usize,
) -> Result<Vec<usize>> {
    eval_set(task, n_eval)?
        .par_iter()
        .map(|ex| predict(params, config, task, &build_context(task, demos, &ex.input, config.max_seq_len)?))
        .collect()
}

pub fn icl_accuracy<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    task: &Task,
    demos: &[Example],
    n_eval: usize,
) -> Result<f64> {
    Ok(accuracy(&icl_predictions(params, config, task, demos, n_eval)?, eval_set(task, n_eval)?))
}

pub fn demo_sequences(task: &Task, demos: &[Example]) -> Result<Vec<TokenSequence>> {
    demos.iter().map(|d| task.format(d, true)).collect()
}

pub fn finetune_on_demos<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    task: &Task,
    demos: &[Example],
    exp: &ExperimentConfig,
    lr: f64,
) -> Result<FinetuneResult<T>> {
    let spec = FinetuneSpec {
        learning_rate: lr,
        loss_positions: exp.ft_loss_positions,
        query_recording: exp.query_recording,
        ..FinetuneSpec::new(lr)
    };
    finetune_kv(params, config, &demo_sequences(task, demos)?, &spec)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub kind: &'static str,
    pub seed: u64,
    pub lr: Option<f64>,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridResult {
    pub best_seed: u64,
    pub best_lr: f64,
    pub best_icl_accuracy: f64,
    pub best_ft_accuracy: f64,
    pub points: Vec<GridPoint>,
}

/// Seed by ICL validation accuracy, then learning rate by FT validation
/// accuracy on the chosen seed's demonstrations. Ties go to the lowest
/// learning rate, then the lowest seed.
pub fn grid_search<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    task: &Task,
    exp: &ExperimentConfig,
) -> Result<GridResult> {
    let mut seeds = exp.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let lrs = exp.lr_grid();
    if seeds.is_empty() || lrs.is_empty() {
        return Err(config_err("grid search needs at least one seed and one learning rate"));
    }
    let examples = eval_set(task, exp.n_eval)?;
    let icl: Vec<f64> = seeds
        .par_iter()
        .map(|&s| {
            let demos = sample_demos(task, exp.n_demos, s)?;
            icl_accuracy(params, config, task, &demos.examples, exp.n_eval)
        })
        .collect::<Result<_>>()?;
    let best = argmax_first(&icl);
    let best_seed = seeds[best];
    let demos = sample_demos(task, exp.n_demos, best_seed)?.examples;
    let ft: Vec<f64> = lrs
        .par_iter()
        .map(|&lr| {
            let tuned = finetune_on_demos(params, config, task, &demos, exp, lr)?;
            let pred: Vec<usize> = examples
                .iter()
                .map(|ex| predict(&tuned.params, config, task, &build_context(task, &[], &ex.input, config.max_seq_len)?))
                .collect::<Result<_>>()?;
            Ok(accuracy(&pred, examples))
        })
        .collect::<Result<_>>()?;
    let best_l = argmax_first(&ft);
    let mut points: Vec<GridPoint> =
        seeds.iter().zip(&icl).map(|(&seed, &accuracy)| GridPoint { kind: "icl", seed, lr: None, accuracy }).collect();
    points.extend(lrs.iter().zip(&ft).map(|(&lr, &accuracy)| GridPoint { kind: "ft", seed: best_seed, lr: Some(lr), accuracy }));
    Ok(GridResult {
        best_seed,
        best_lr: lrs[best_l],
        best_icl_accuracy: icl[best],
        best_ft_accuracy: ft[best_l],
        points,
    })
}

/// Index of the first maximum; candidates are listed in tie-break order.
fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Everything measured for one evaluation example.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExampleRecord {
    pub index: usize,
    pub gold: usize,
    pub zsl: usize,
    pub icl: usize,
    pub ft: usize,
    pub simaou: Vec<f64>,
    pub simaou_random: Vec<f64>,
    pub simam_before: Vec<f64>,
    pub simam_after: Vec<f64>,
    /// Empty without demonstrations.
    pub kendall: Vec<f64>,
    pub kendall_random: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Accuracy {
    pub zsl: f64,
    pub ft: f64,
    pub icl: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub task: String,
    pub seed: u64,
    pub lr: f64,
    pub n_demos: usize,
    pub accuracy: Accuracy,
    pub rec2ftp: Option<f64>,
    #[serde(skip)]
    pub examples: Vec<ExampleRecord>,
    pub reports: Vec<MetricReport>,
}

impl Comparison {
    pub fn triples(&self) -> Vec<PredictionTriple> {
        self.examples
            .iter()
            .map(|e| PredictionTriple { gold: e.gold, zsl: e.zsl, ft: e.ft, icl: e.icl })
            .collect()
    }

    pub fn report(&self, metric: &str) -> Option<&MetricReport> {
        self.reports.iter().find(|r| r.metric == metric)
    }
}

/// ZSL, ICL with `demos`, and FT on `demos` at `lr`, evaluated on the
/// validation examples, with all comparison metrics.
pub fn compare<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    task: &Task,
    demos: &[Example],
    lr: f64,
    seed: u64,
    model_id: &str,
    exp: &ExperimentConfig,
) -> Result<Comparison> {
    let examples = eval_set(task, exp.n_eval)?;
    let tuned = finetune_on_demos(params, config, task, demos, exp, lr).map_err(|e| e.in_stage("finetune"))?;
    let records: Vec<ExampleRecord> = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| measure(params, config, task, demos, &tuned, exp, seed, i, ex))
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("evaluate"))?;

    let pred = |f: fn(&ExampleRecord) -> usize| records.iter().map(f).collect::<Vec<_>>();
    let accuracy = Accuracy {
        zsl: accuracy(&pred(|r| r.zsl), examples),
        ft: accuracy(&pred(|r| r.ft), examples),
        icl: accuracy(&pred(|r| r.icl), examples),
    };
    let triples: Vec<PredictionTriple> =
        records.iter().map(|e| PredictionTriple { gold: e.gold, zsl: e.zsl, ft: e.ft, icl: e.icl }).collect();
    let rec = rec2ftp(&triples).map_err(|e| e.in_stage("rec2ftp"))?;

    let name = &task.name;
    let column = |f: fn(&ExampleRecord) -> &Vec<f64>| records.iter().map(|r| f(r).clone()).collect::<Vec<_>>();
    let norm = Some(exp.normalization);
    let mut reports = vec![
        MetricReport::scalar("rec2ftp", model_id, name, seed, rec, records.len()),
        MetricReport::from_layers("simaou", model_id, name, seed, column(|r| &r.simaou), Some(column(|r| &r.simaou_random)), norm)?,
        MetricReport::from_layers("simam_before", model_id, name, seed, column(|r| &r.simam_before), None, None)?,
        MetricReport::from_layers("simam_after", model_id, name, seed, column(|r| &r.simam_after), None, None)?,
    ];
    if !demos.is_empty() {
        reports.push(MetricReport::from_layers(
            "kendall",
            model_id,
            name,
            seed,
            column(|r| &r.kendall),
            Some(column(|r| &r.kendall_random)),
            None,
        )?);
    }
    Ok(Comparison { task: name.clone(), seed, lr, n_demos: demos.len(), accuracy, rec2ftp: rec, examples: records, reports })
}

#[allow(clippy::too_many_arguments)]
fn measure<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    task: &Task,
    demos: &[Example],
    tuned: &FinetuneResult<T>,
    exp: &ExperimentConfig,
    seed: u64,
    index: usize,
    ex: &Example,
) -> Result<ExampleRecord> {
    let zsl_ctx = build_context(task, &[], &ex.input, config.max_seq_len)?;
    let icl_ctx = build_context(task, demos, &ex.input, config.max_seq_len)?;
    let run = |p: &ModelParams<T>, ctx: &TokenSequence| -> Result<_> {
        let out = forward(p, config, ctx, true)?;
        let predicted = answer_scores(&out.logits, &task.candidates)?.predicted;
        Ok((predicted, out.trace.expect("trace requested")))
    };
    let (zsl, t_zsl) = run(params, &zsl_ctx)?;
    let (icl, t_icl) = run(params, &icl_ctx)?;
    let (ft, t_ft) = run(&tuned.params, &zsl_ctx)?;

    let example_seed = derive_seed(seed, &format!("example.{index}"));
    let simaou_v = simaou(&t_icl, &t_ft, &t_zsl, exp.normalization)?;
    let simaou_r = simaou_random_baseline(&t_icl, &t_zsl, exp.normalization, exp.baseline_samples, example_seed)?;
    let q_icl = icl_ctx.query_token_positions();
    let q_zsl = zsl_ctx.query_token_positions();
    let simam_before = simam(&t_icl, &q_icl, &t_zsl, &q_zsl)?;
    let simam_after = simam(&t_icl, &q_icl, &t_ft, &q_zsl)?;

    let (mut kendall_v, mut kendall_r) = (Vec::new(), Vec::new());
    if !demos.is_empty() {
        let demo_positions = icl_ctx.demo_token_positions();
        for l in 0..config.n_layers {
            let m_icl = icl_attention_map(&t_icl, &demo_positions, l)?;
            let m_ft = ft_attention_map(tuned, &t_ft, l)?;
            kendall_v.push(kendall(&m_icl, &m_ft)?);
            kendall_r.push(kendall_random_baseline(&m_icl, exp.baseline_samples, derive_seed(example_seed, &format!("layer.{l}")))?);
        }
    }
    Ok(ExampleRecord {
        index,
        gold: ex.label,
        zsl,
        icl,
        ft,
        simaou: simaou_v,
        simaou_random: simaou_r,
        simam_before,
        simam_after,
        kendall: kendall_v,
        kendall_random: kendall_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{make_task, TaskKind, TaskSizes};

    fn setup() -> (ModelConfig, ModelParams<f64>, Task, ExperimentConfig) {
        let sizes = TaskSizes { n_train: 32, n_validation: 12, ..TaskSizes::default() };
        let task = make_task(TaskKind::TokenMajority, &sizes, 3).unwrap();
        let config = ModelConfig {
            vocab_size: task.vocab.len(),
            d_model: 16,
            n_heads: 2,
            d_head: 8,
            d_ffn: 32,
            max_seq_len: 64,
            precision: crate::tensor::Precision::Double,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&config, 4).unwrap();
        let exp = ExperimentConfig {
            n_demos: 4,
            n_eval: 12,
            seeds: vec![2, 1, 3],
            lr_bases: vec![1.0, 2.0],
            lr_scales: vec![0.1],
            baseline_samples: 8,
            ..ExperimentConfig::default()
        };
        (config, params, task, exp)
    }

    #[test]
    fn zero_demos_reduce_icl_to_zsl() {
        let (config, params, task, exp) = setup();
        let c = compare(&params, &config, &task, &[], 0.1, 1, "m", &exp).unwrap();
        assert!(c.examples.iter().all(|e| e.icl == e.zsl && e.ft == e.zsl));
        assert_eq!(c.accuracy.icl, c.accuracy.zsl);
        assert!(c.report("kendall").is_none());
    }

    #[test]
    fn accuracies_follow_from_stored_predictions() {
        let (config, params, task, exp) = setup();
        let demos = sample_demos(&task, exp.n_demos, 1).unwrap().examples;
        let c = compare(&params, &config, &task, &demos, 0.1, 1, "m", &exp).unwrap();
        let icl = c.examples.iter().filter(|e| e.icl == e.gold).count() as f64 / c.examples.len() as f64;
        assert_eq!(icl, c.accuracy.icl);
        assert_eq!(c.rec2ftp, rec2ftp(&c.triples()).unwrap());
        for r in &c.reports {
            if let Some(m) = r.mean {
                assert!((-1.0..=1.0).contains(&m), "{}: {m}", r.metric);
            }
        }
        assert_eq!(c.report("kendall").unwrap().per_layer.len(), config.n_layers);
    }

    #[test]
    fn parallel_matches_serial() {
        let (config, params, task, exp) = setup();
        let demos = sample_demos(&task, exp.n_demos, 2).unwrap().examples;
        let serial = with_workers(1, || compare(&params, &config, &task, &demos, 0.1, 2, "m", &exp)).unwrap().unwrap();
        let parallel = with_workers(3, || compare(&params, &config, &task, &demos, 0.1, 2, "m", &exp)).unwrap().unwrap();
        assert_eq!(serial.examples, parallel.examples);
        let g1 = with_workers(1, || grid_search(&params, &config, &task, &exp)).unwrap().unwrap();
        let g3 = with_workers(3, || grid_search(&params, &config, &task, &exp)).unwrap().unwrap();
        assert_eq!(g1, g3);
    }

    #[test]
    fn grid_lists_every_point_and_breaks_ties_low() {
        let (config, params, task, mut exp) = setup();
        let g = grid_search(&params, &config, &task, &exp).unwrap();
        assert_eq!(g.points.len(), 3 + 2);
        let icl: Vec<_> = g.points.iter().filter(|p| p.kind == "icl").collect();
        assert_eq!(icl.iter().map(|p| p.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
        let top = icl.iter().map(|p| p.accuracy).fold(f64::MIN, f64::max);
        assert_eq!(g.best_seed, icl.iter().find(|p| p.accuracy == top).unwrap().seed);

        exp.seeds = vec![5];
        exp.lr_bases = vec![0.0];
        exp.lr_scales = vec![1.0];
        let g = grid_search(&params, &config, &task, &exp).unwrap();
        assert_eq!((g.best_seed, g.best_lr), (5, 0.0));
    }
}
