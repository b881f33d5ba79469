//! Experiment harness: data ingestion, metrics, index pipelines, synthetic
//! corpus generation and experiment orchestration.

pub mod data;
pub mod experiment;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use data::{load_qrels, load_queries, Corpus, CorpusDoc, Qrels, Query};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport, GridPointReport};
pub use metrics::{asr, sr};
pub use pipeline::{build_combo_index, build_full_index};
