//! Classification on top of the fused equilibrium: synthetic tasks, the
//! affine head, the ablation variants, optimizers, metrics and the
//! training loop.

mod data;
mod metrics;
mod model;
mod optim;
mod train;
mod variant;

pub use data::{gen_signproduct, Dataset, LabelRule, SyntheticTaskSpec, TaskData};
pub use metrics::{metrics, metrics_from_predictions, predictions, Metrics};
pub use model::{cross_entropy, HeadParams, Model};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    evaluate, history_csv, init_model, jacobian_estimate, train, train_from, EpochRecord, TrainConfig, TrainResult,
    TASK_INIT_GAIN,
};
pub use variant::{forward_predict, loss_and_grads, AblationVariant, StepConfig, StepOutput};
