//! Config-driven experiments: model registry, inline models, the run and
//! compare pipelines and their CSV/JSON artifacts.

pub mod config;
pub mod inline;
pub mod models;
pub mod run;

pub use config::{
    EventNoiseConfig, ExperimentConfig, HpeConfig, ModelConfig, MonteCarloSection, NoiseConfig,
    SCHEMA_VERSION,
};
pub use inline::{inline_model, InlineModel};
pub use models::{build_model, list_models, BuiltinInfo, Model, BUILTINS};
pub use run::{
    write_arc_csv, write_compare, write_events_csv, write_fim_timeseries, write_run, CompareReport,
    Experiment, MetricsRow, RunReport, RunResult,
};
