//! Training, checkpoints, evaluation and forecast metrics.

mod checkpoint;
mod eval;
pub mod metrics;
mod report;
mod trainer;

pub use checkpoint::{Checkpoint, RunMeta, CHECKPOINT_VERSION};
pub use eval::{
    evaluate, evaluate_or_report, report_meta, score_segment, slot_passes, EvalOptions, Protocol,
    SlotPass, NORMALIZATION_NOTE,
};
pub use metrics::{mae, mape, rmse, ErrorAcc, Mape, MAPE_EPS};
pub use report::{
    check_horizons, AverageRow, MetricsReport, ReportMeta, StepRow, DEFAULT_HORIZONS,
};
pub use trainer::{
    load_source, log_to_jsonl, prepare, prepare_from, resolve_model, train, train_prepared,
    DataSource, EpochRecord, Prepared, TrainConfig, TrainOutcome,
};
