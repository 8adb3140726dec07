use std::path::Path;
use std::process::{Command, Output};

fn icldual(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icldual"))
        .args(args)
        .env("ICLDUAL_OUT", out_root)
        .output()
        .expect("binary runs")
}

const SMALL: &[&str] = &[
    "--set", "d_model=16", "--set", "n_heads=2", "--set", "d_head=8", "--set", "d_ffn=32",
    "--set", "max_seq_len=64", "--set", "train.steps=4", "--set", "train.batch_size=2",
    "--set", "train.log_every=2", "--set", "train.n_seqs=20", "--set", "train.max_demos=5",
    "--set", "train.seq_len=32", "--set", "train.warmup=1", "--set", "eval.lengths=8,16",
    "--set", "task.n_train=32", "--set", "task.n_validation=6", "--set", "icl.n_demos=3",
    "--set", "icl.n_eval=6", "--set", "grid.seeds=1,2", "--set", "grid.lr_bases=1",
    "--set", "grid.lr_scales=0.01", "--set", "metrics.baseline_samples=3",
];

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL.iter().copied()).collect()
}

#[test]
fn dualcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = icldual(&["dualcheck", "--set", "dualcheck.trials=25", "--precision", "f64"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(dir.path().join("dualcheck/dualcheck.csv").exists());
    assert!(dir.path().join("dualcheck/run.json").exists());

    let failing = icldual(
        &["dualcheck", "--set", "dualcheck.trials=5", "--set", "dualcheck.tol=0", "--set", "dualcheck.n_min=4"],
        dir.path(),
    );
    assert_eq!(failing.status.code(), Some(1));
}

#[test]
fn config_errors_exit_2_and_runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = icldual(&["dualcheck", "--set", "no.such.key=1"], dir.path());
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("no.such.key"));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "# comment\nthis line has no equals sign\n").unwrap();
    let bad_file = icldual(&["dualcheck", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(bad_file.status.code(), Some(2));

    let corrupt = dir.path().join("corrupt.bin");
    std::fs::write(&corrupt, b"definitely not a checkpoint").unwrap();
    let res = icldual(&["gridsearch", "--checkpoint", corrupt.to_str().unwrap()], dir.path());
    assert_eq!(res.status.code(), Some(2), "a malformed checkpoint is bad input");

    let missing = icldual(&["gridsearch", "--checkpoint", dir.path().join("absent.bin").to_str().unwrap()], dir.path());
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("checkpoint"), "stage name reported");
}

#[test]
fn train_then_evaluate_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    let mut text = String::from("# shared settings\nseed = 5\n");
    for pair in SMALL.chunks(2) {
        text.push_str(pair[1]);
        text.push('\n');
    }
    std::fs::write(&cfg, text).unwrap();
    let cfg = cfg.to_str().unwrap();

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let r = icldual(&["train-lm", "--config", cfg, "--out", out.to_str().unwrap()], dir.path());
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let ckpt_a = std::fs::read(a.join("checkpoint.bin")).unwrap();
    assert_eq!(ckpt_a, std::fs::read(b.join("checkpoint.bin")).unwrap());

    // flags override the file
    let m = dir.path().join("m");
    let r = icldual(
        &["train-lm", "--config", cfg, "--variant", "momentum", "--eta", "0.5", "--out", m.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let record: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(m.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["config"]["attention"], "momentum");
    assert_eq!(record["config"]["seed"], "5");
    assert_eq!(record["command"], "train-lm");
    assert_eq!(record["checkpoint_hash"].as_str().unwrap().len(), 64);

    let ppl = icldual(
        &[
            "eval-ppl", "--config", cfg, "--checkpoint", a.join("checkpoint.bin").to_str().unwrap(), "--checkpoint",
            m.join("checkpoint.bin").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(ppl.status.code(), Some(0), "{}", String::from_utf8_lossy(&ppl.stderr));
    let table = std::fs::read_to_string(dir.path().join("eval-ppl/perplexity.csv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "model,Train_32,Valid_8,Valid_16");
    assert_eq!(rows.len(), 3);
    assert!(rows[2].contains("moattn"));

    let ckpt = a.join("checkpoint.bin");
    let compare = icldual(&with_small(&["compare", "--seed", "5", "--checkpoint", ckpt.to_str().unwrap()]), dir.path());
    assert_eq!(compare.status.code(), Some(0), "{}", String::from_utf8_lossy(&compare.stderr));
    for f in ["accuracy.csv", "accuracy.txt", "rec2ftp.csv", "simaou.csv", "simam.csv", "kendall.csv", "grid.csv", "predictions.csv", "run.json"] {
        assert!(dir.path().join("compare").join(f).exists(), "{f}");
    }
}
