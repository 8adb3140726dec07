//! Toy laboratory for the duality between transformer attention and
//! gradient descent.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense matrices and vectors with deterministic reductions.
//! * [`attention`]: single-head softmax, relaxed linear and momentum attention.
//! * [`dual_form`]: the `W_ZSL + ΔW_ICL` decomposition and its checkers.
//! * [`model`]: a small decoder-only transformer with exact backprop,
//!   tracing, answer scoring, LM training and checkpoints.
//! * [`finetune`]: one-epoch SGD restricted to key/value projections.
//! * [`metrics`]: Rec2FTP, SimAOU, SimAM and Kendall tau with baselines.
//! * [`tasks`]: synthetic classification tasks, templates and contexts.
//! * [`harness`]: configuration, experiment pipelines and report files.

pub mod attention;
pub mod dual_form;
pub mod error;
pub mod finetune;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
