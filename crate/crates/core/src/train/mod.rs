//! Training loop, metrics and evaluation.

pub mod evaluate;
pub mod metrics;
pub mod trainer;

pub use evaluate::{evaluate, read_predictions, report_from_predictions, write_predictions, MetricsReport, PredictionRow};
pub use metrics::{argmax, auprc, auroc, confusion_metrics, ConfusionMetrics};
pub use trainer::{
    fit, inverse_frequency_weights, mean_loss, prepare_examples, train, ClassWeighting, EpochRecord, Example, History,
    TrainConfig,
};
