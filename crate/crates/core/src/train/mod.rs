//! Two-phase optimization, the SGD rule, and segmentation metrics.

mod config;
mod metrics;
mod sgd;
mod trainer;

pub use config::{TrainConfig, TrainMode};
pub use metrics::{hmiou, ConfusionMatrix, MetricsReport};
pub use sgd::{sgd_step, Sgd};
pub use trainer::{
    composite_loss, evaluate, EpochRecord, LossParts, SceneInputs, SceneLoss, TrainState, Trainer,
    METRICS_CSV_HEADER,
};
