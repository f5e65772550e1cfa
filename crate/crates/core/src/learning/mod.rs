//! Per-timestep training: losses, the analytic backward pass, optimizers and
//! gradient verification.

mod backward;
pub mod bptt;
pub mod gradcheck;
mod init;
mod loss;
mod optimizer;
mod trainer;

pub use bptt::{bptt_sg_delay_reference, SurrogateConfig, SurrogateKind};
pub use backward::{backward_step, GradientBuffers, LayerGrads};
pub use gradcheck::{frozen_trace_fd_check, GradCheckConfig, GradCheckReport};
pub use init::{init_parameters, BUCKET_WEIGHT_STD};
pub use loss::{loss_step, LossConfig, LossKind, StepTarget, Target};
pub use optimizer::{Optimizer, OptimizerConfig, OptimizerKind, Schedule};
pub use trainer::{
    evaluate, run_sample, sample_rng, sequence_classify, target_spike_time, EpochStats, EvalStats, Readout,
    SampleRun, Trainer,
};
