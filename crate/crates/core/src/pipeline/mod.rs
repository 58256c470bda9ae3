//! End-to-end runs: configuration, pretraining, cross-validated fine-tuning
//! and report tables.

pub mod config;
pub mod report;
pub mod run;
pub mod synthetic;

pub use config::{Ablations, RunConfig};
pub use report::{cmd_eval, collect_reports, EvalReport, EvalTable};
pub use run::{
    cmd_finetune, cmd_pretrain, finetune, load_dataset, loss_csv, pretrain, resolve_data_root, stratified_folds,
    PretrainOutcome,
};
