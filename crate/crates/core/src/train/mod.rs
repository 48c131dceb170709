//! Training loops, evaluation, benchmarking and feature-projection export.

mod benchres;
mod eval;
mod optimizer;
mod projection;
mod step;
mod trainer;

pub use benchres::{benchmark, BenchReport, BENCH_WARMUP};
pub use eval::{
    evaluate, horizon_metrics, predict_sequence, HorizonMetrics, Metrics, DEFAULT_EVAL_STEPS,
    MAPE_EPSILON,
};
pub use optimizer::{lr_at, Adam};
pub use projection::{export_hidden_projection, HiddenProjection, ScatterRow};
pub use step::{
    epoch_batches, kd_step, normalized_first_step_targets, regression_step, select_inputs,
    validation_loss, LossKind, StepOutcome,
};
pub use trainer::{
    curve_csv, train_student_kd, train_teacher, EpochStats, TrainConfig, TrainOutcome,
};
