//! Training, inference, evaluation and the study harnesses.

pub mod config;
pub mod detect;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod train;

pub use config::{EvalConfig, LeakageConfig, TrainConfig};
pub use detect::{detect, filter_detections, score_candidates, Candidates, Detection};
pub use eval::{
    compare_splits, default_split_specs, evaluate, evaluate_with_threads, lambda_csv, mean_std,
    sweep_lambda, sweep_proposal_threshold, threshold_csv, EpisodeResult, EvalReport, LambdaRow,
    ModeSummary, SplitComparison, SplitRow, SplitSpec, ThresholdRow, DEFAULT_LAMBDAS,
};
pub use gradcheck::{run_gradcheck, GradcheckConfig, GradcheckSummary, LossPath, PathResult};
pub use metrics::{
    ap_at_tiou, average_map, average_map_thresholds, map_at_tiou, rank_order, LabeledSegment,
};
pub use model::{apply_leakage, leak_row, visible_basis, Model, PARAMS_MAGIC};
pub use train::{
    plan_step, step_loss, train, EpisodeData, LossRecord, LossWeights, StepLosses, StepPlan,
    StepSettings, TrainOutcome,
};
