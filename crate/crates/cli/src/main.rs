use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icldual::harness::{self, read_kv_file, Command, ExperimentConfig};

/// Exit status for a failed check (dualcheck).
const EXIT_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "icldual", version, about = "In-context learning vs. gradient descent lab")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Copy, Clone, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args)]
struct Common {
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; defaults to $ICLDUAL_OUT/<command>
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any configuration key, e.g. --set train.steps=200
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Sub {
    /// Check the gradient-descent and attention dual forms on random instances
    Dualcheck,
    /// Train a language model from scratch
    TrainLm {
        #[arg(long, value_parser = ["standard", "momentum"])]
        variant: Option<String>,
        #[arg(long)]
        eta: Option<f64>,
        /// Byte-level corpus file (default: the synthetic corpus)
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Perplexity table for one or more checkpoints
    EvalPpl {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Comma-separated evaluation lengths
        #[arg(long)]
        lengths: Option<String>,
    },
    /// Zero-shot and in-context accuracy for one or more checkpoints
    EvalIcl {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Restricted key/value finetuning on sampled demonstrations
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Grid search, then ZSL / ICL / FT comparison with all metrics
    Compare {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Seed and learning-rate grid search
    Gridsearch {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn put(kv: &mut BTreeMap<String, String>, k: &str, v: String) {
    kv.insert(k.to_string(), v);
}

fn build(cli: &Cli) -> icldual::Result<(Command, ExperimentConfig)> {
    let mut kv: BTreeMap<String, String> = match &cli.common.config {
        Some(path) => read_kv_file(path)?,
        None => BTreeMap::new(),
    };
    let command = match &cli.command {
        Sub::Dualcheck => Command::Dualcheck,
        Sub::TrainLm { variant, eta, corpus } => {
            if let Some(v) = variant {
                put(&mut kv, "attention", v.clone());
            }
            if let Some(e) = eta {
                put(&mut kv, "eta", e.to_string());
            }
            if let Some(c) = corpus {
                put(&mut kv, "train.corpus", c.display().to_string());
            }
            Command::TrainLm
        }
        Sub::EvalPpl { checkpoints, corpus, lengths } => {
            if let Some(c) = corpus {
                put(&mut kv, "train.corpus", c.display().to_string());
            }
            if let Some(l) = lengths {
                put(&mut kv, "eval.lengths", l.clone());
            }
            Command::EvalPpl { checkpoints: checkpoints.clone() }
        }
        Sub::EvalIcl { checkpoints } => Command::EvalIcl { checkpoints: checkpoints.clone() },
        Sub::Finetune { checkpoint } => Command::Finetune { checkpoint: checkpoint.clone() },
        Sub::Compare { checkpoint } => Command::Compare { checkpoint: checkpoint.clone() },
        Sub::Gridsearch { checkpoint } => Command::Gridsearch { checkpoint: checkpoint.clone() },
    };
    let c = &cli.common;
    if let Some(s) = c.seed {
        put(&mut kv, "seed", s.to_string());
    }
    if let Some(p) = c.precision {
        put(&mut kv, "precision", match p {
            PrecisionArg::F32 => "f32",
            PrecisionArg::F64 => "f64",
        }
        .into());
    }
    if let Some(w) = c.workers {
        put(&mut kv, "workers", w.to_string());
    }
    for item in &c.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| icldual::Error::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
        put(&mut kv, k.trim(), v.trim().to_string());
    }
    let has_out = kv.contains_key("out");
    let out = match &c.out {
        Some(o) => Some(o.clone()),
        None if !has_out => {
            Some(PathBuf::from(std::env::var("ICLDUAL_OUT").unwrap_or_else(|_| "icldual-out".into())).join(command.name()))
        }
        None => None,
    };
    if let Some(o) = out {
        put(&mut kv, "out", o.display().to_string());
    }
    let config = ExperimentConfig::default().apply_kv(&kv)?;
    Ok((command, config))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build(&cli).and_then(|(command, config)| harness::run(&command, &config));
    match result {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
