//! Offline metrics, prediction dumps, closed-loop driving and report
//! emission.

pub mod closed_loop;
pub mod metrics;
pub mod offline;
pub mod plot;
pub mod report;

pub use closed_loop::{closed_loop_eval, ClosedLoopConfig, ClosedLoopResult, ConstantPolicy, ExpertPolicy, Policy};
pub use metrics::{error_variance, mae, margin_percentages, mse, rmse, Margin, MetricsReport, DEFAULT_MARGINS};
pub use offline::{offline_eval, read_predictions, write_predictions, Prediction, PREDICTIONS_FILE};
pub use report::{
    emit_ablation, emit_report, read_summary, AblationRow, ClosedLoopEntry, PredictionSet, ReportInput, Summary,
};
