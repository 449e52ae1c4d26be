//! Layer plans, training and evaluation.

mod adam;
mod checkpoint;
mod config;
mod metrics;
mod model;
pub mod presets;
mod train;

pub use adam::Adam;

/// Key lists accepted in the `network` and `pyramid` sections.
pub mod config_keys {
    pub use super::config::{NETWORK_KEYS, PYRAMID_KEYS};
}

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, FORMAT_VERSION, MAGIC};
pub use config::{
    LayerConfig, LayerKind, NetworkConfig, Task, TrainConfig, DEFAULT_CAP, DEFAULT_MULTIPLIER,
};
pub use metrics::{ConfusionMatrix, Metrics};
pub use model::{
    input_features, plan, Gradients, LayerGrads, LayerParams, Level, ModelSummary, Network,
    PlanStep, Sample, SummaryRow, TensorView,
};
pub use train::{
    argmax_rows, evaluate, loss_and_grad, train, EpochRecord, Evaluation, Target, TrainingLog,
};
