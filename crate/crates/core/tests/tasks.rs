use icldual::model::{
    score_answers, train_lm, Corpus, LossPositions, LrSchedule, ModelConfig, ModelParams, SpanKind, TrainHyper,
};
use icldual::tasks::{build_context, ingest_tsv, make_task, sample_demos, TaskKind, TaskSizes};
use proptest::prelude::*;

fn write(dir: &tempfile::TempDir, name: &str, text: &[u8]) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn two_row_file_gives_two_examples_and_two_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "two.tsv", b"text\tlabel\ngood film\tpos\nbad film\tneg\n");
    let got = ingest_tsv(&p, "text", "label", 0.0, 1).unwrap();
    assert!(got.skipped.is_empty());
    assert_eq!(got.task.train.len() + got.task.validation.len(), 2);
    assert_eq!(got.task.candidates.len(), 2);
    for w in ["good", "bad", "film"] {
        assert!(got.task.vocab.id(w).is_some(), "{w}");
    }
}

#[test]
fn reingesting_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("id\ttext\tlabel\n");
    for i in 0..20 {
        text.push_str(&format!("{i}\tword{} other{}\t{}\n", i % 5, i % 3, ["a", "b", "c"][i % 3]));
    }
    let p = write(&dir, "d.tsv", text.as_bytes());
    let a = ingest_tsv(&p, "text", "label", 0.25, 9).unwrap();
    let b = ingest_tsv(&p, "text", "label", 0.25, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.task.validation.len(), 5);
}

#[test]
fn one_malformed_row_of_ten_is_skipped_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = b"text\tlabel\n".to_vec();
    for i in 0..10 {
        if i == 6 {
            text.extend_from_slice(b"broken row with \xff\xfe bytes\tx\n");
        } else {
            text.extend_from_slice(format!("w{i} shared\t{}\n", i % 2).as_bytes());
        }
    }
    let p = write(&dir, "ten.tsv", &text);
    let got = ingest_tsv(&p, "text", "label", 0.0, 1).unwrap();
    assert_eq!(got.task.train.len(), 9);
    assert_eq!(got.skipped.len(), 1);
    assert_eq!(got.skipped[0].line, 8);
}

#[test]
fn bad_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(&dir, "empty.tsv", b"");
    assert!(ingest_tsv(&empty, "text", "label", 0.0, 1).unwrap_err().is_config());
    let no_col = write(&dir, "nocol.tsv", b"sentence\tlabel\nhi\tx\n");
    let err = ingest_tsv(&no_col, "text", "label", 0.0, 1).unwrap_err();
    assert!(err.to_string().contains("missing column"), "{err}");
}

#[test]
fn token_majority_is_learnable_by_supervised_training() {
    let sizes = TaskSizes { n_train: 512, n_validation: 200, ..TaskSizes::default() };
    let task = make_task(TaskKind::TokenMajority, &sizes, 11).unwrap();
    let config = ModelConfig {
        vocab_size: task.vocab.len(),
        d_model: 32,
        n_heads: 2,
        d_head: 16,
        d_ffn: 64,
        max_seq_len: 16,
        ..ModelConfig::default()
    };
    let seqs = task.train.iter().map(|e| task.format(e, true).unwrap()).collect();
    let hyper = TrainHyper {
        steps: 400,
        batch_size: 16,
        seq_len: 0,
        lr: LrSchedule { peak: 3e-3, warmup_steps: 20, total_steps: 400, end: 3e-4, power: 1.0 },
        log_every: 100,
        loss_positions: LossPositions::LabelsOnly,
        ..TrainHyper::default()
    };
    let params = ModelParams::<f32>::init(&config, 2).unwrap();
    let trained = train_lm(params, &config, &Corpus::Sequences(seqs), &hyper, 3).unwrap().params;
    let hits = task
        .validation
        .iter()
        .filter(|ex| {
            let ctx = build_context(&task, &[], &ex.input, config.max_seq_len).unwrap();
            score_answers(&trained, &config, &ctx, &task.candidates).unwrap().predicted == ex.label
        })
        .count();
    let acc = hits as f64 / task.validation.len() as f64;
    assert!(acc > 0.9, "validation accuracy {acc}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spans_partition_every_context(seed in 0u64..500, n in 0usize..12, kind in 0usize..3) {
        let kind = [TaskKind::TokenMajority, TaskKind::KeywordTopic, TaskKind::ParityPair][kind];
        let task = make_task(kind, &TaskSizes { n_train: 40, n_validation: 4, ..TaskSizes::default() }, seed).unwrap();
        let demos = sample_demos(&task, n, seed).unwrap();
        let ctx = build_context(&task, &demos.examples, &task.validation[0].input, 512).unwrap();
        let mut owner = vec![0usize; ctx.len()];
        for s in &ctx.spans {
            for p in s.start..s.end {
                owner[p] += 1;
            }
        }
        prop_assert!(owner.iter().all(|&c| c == 1));
        prop_assert_eq!(ctx.demo_spans().count(), n);
        prop_assert_eq!(ctx.spans.last().unwrap().kind, SpanKind::Query);
        prop_assert_eq!(ctx.label_positions.len(), n);
    }

    #[test]
    fn permuting_demos_permutes_spans(seed in 0u64..500, n in 2usize..8, rot in 1usize..7) {
        let task = make_task(TaskKind::KeywordTopic, &TaskSizes { n_train: 40, n_validation: 4, ..TaskSizes::default() }, seed).unwrap();
        let demos = sample_demos(&task, n, seed).unwrap().examples;
        let mut rotated = demos.clone();
        rotated.rotate_left(rot % n);
        let q = &task.validation[0].input;
        let a = build_context(&task, &demos, q, 512).unwrap();
        let b = build_context(&task, &rotated, q, 512).unwrap();
        let piece = |ctx: &icldual::model::TokenSequence, i: usize| ctx.ids[ctx.spans[i].start..ctx.spans[i].end].to_vec();
        for i in 0..n {
            prop_assert_eq!(piece(&a, (i + rot % n) % n), piece(&b, i));
        }
    }
}

#[test]
fn overflow_names_the_demo_count() {
    let task = make_task(TaskKind::TokenMajority, &TaskSizes::default(), 1).unwrap();
    let demos = sample_demos(&task, 20, 1).unwrap();
    let err = build_context(&task, &demos.examples, &task.validation[0].input, 64).unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("20 demonstrations"), "{err}");
}
