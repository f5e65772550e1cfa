//! Reproducible runs: configuration, checkpoints, metrics and the commands
//! exposed by the CLI.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod metrics;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use commands::{
    build_network, cmd_density, cmd_eval, cmd_gradcheck, cmd_kernel_dump, cmd_trace, cmd_train, config_alphas,
    density_report, init_network, layer_spike_counts, load_dataset, prepare, trace_network, workers_from_env,
    Dataset, DensityReport, EvalReport, GradcheckCaseReport, GradcheckOptions, GradcheckSummary, LayerDensity,
    NeuronRef, NeuronTrace, TraceOptions, TrainOptions, WORKERS_ENV,
};
pub use config::{
    CoincidenceTask, DelayTask, EventsTask, InitOverrides, LayerValues, ModelConfig, OutputConfig, RunConfig,
    SyntheticEventsTask, TaskConfig, TrainableSet, TrainingConfig,
};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, RunSummary, METRICS_PREAMBLE, SUMMARY_SCHEMA};
