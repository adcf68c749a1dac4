//! Experiment harness: configuration, training and evaluation runs for the
//! two tasks, and the metric files they produce.

mod config;
mod metrics;
mod run;

pub use config::{derive_seed, ExperimentConfig, Task};
pub use metrics::{
    compute_auc, export_curves, load_metrics, read_curves_csv, read_eval_curve_csv, read_metrics_csv,
    write_curves_csv, write_eval_curve_csv, write_metrics_csv, CurveRow, EvalPoint, MetricsRow, CURVES_HEADER,
    EVAL_CURVE_HEADER, METRICS_HEADER,
};
pub use run::{
    compare, evaluate, load_checkpoint_network, mean_expected_reward, play, run_eval, run_training,
    selection_score, train_experiment, write_manifest, CompareRow, EpisodeEval, EvalReport, Experiment,
    Played, Policy, Request, TrainOutcome, TrainingSummary, CATALOG_STEM, CHECKPOINT_STEM,
};
