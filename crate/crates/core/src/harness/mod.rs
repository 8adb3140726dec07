//! Configuration, orchestration and persistence for the experiments.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod record;

pub use commands::{run, Command, Outcome, CHECKPOINT_FILE};
pub use config::{parse_kv, read_kv_file, CorpusSource, DualcheckSettings, ExperimentConfig, TaskSource, TrainSettings};
pub use record::{content_hash, RunRecord, Table, TOOL_VERSION};
