//! Experiment harness: configuration, datasets, the training protocol,
//! run reports and memory-pool persistence.

pub mod config;
pub mod data;
pub mod idx;
pub mod pool;
pub mod report;
pub mod run;

pub use config::{DataSpec, RunConfig, OUTPUT_DIR_ENV};
pub use data::{generate_split_gaussians, GaussianSpec, Split, TaskDataset};
pub use idx::{ingest_idx, IdxArray, IdxSpec};
pub use pool::{decode_pool, encode_pool, load_pool, save_pool};
pub use report::{GammaRecord, MaskCount, RunReport, Strategy};
pub use run::{
    evaluate, evaluate_pool, first_layer_precision, load_tasks, run_baseline, run_baseline_on,
    run_sequence, run_sequence_on, run_with_fwt, RunOutput,
};
