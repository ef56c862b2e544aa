//! Experiment orchestration: configuration, model management, constellation
//! evaluation and parameter sweeps.

mod config;
mod run;
mod store;

pub use config::{
    Axis, DataConfig, EvalConfig, EvalPoint, ExperimentConfig, FeedbackConfig, GeometryConfig,
    GmmSection, PrecoderSection, Scheme, SweepConfig, TrainingSection,
};
pub use run::{
    run_experiment, run_point, sweep, ConstellationRecord, ResultTable, SummaryRow, AUDIT_HEADER,
    SUMMARY_HEADER,
};
pub use store::{
    derive_seed, fit_gmm, needs_gmm, prepare_data, required_models, train_missing, train_model,
    DataSplits, ModelKey, ModelStore,
};
