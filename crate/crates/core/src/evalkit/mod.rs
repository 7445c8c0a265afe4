//! Metrics, the experiment runners and report emission.

mod experiments;
mod metrics;
mod report;

pub use experiments::{
    fixed_holdout, heldout_classes, in_distribution_count, run_classification_experiment, run_embsize_sweep,
    run_experiment, run_generalization_experiment, run_ood_experiment, run_refsize_sweep,
};
pub use metrics::{auroc, mean_std, quantile, quartiles, subject_accuracy, FiveNumber, SubjectMetrics};
pub use report::{emit_report, ExperimentKind, ExperimentReport, FoldSummary, ModelResult, Timing};
