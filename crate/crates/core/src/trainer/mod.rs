//! Full-batch training: optimizer, configuration, the training loop with
//! early stopping, checkpoints and evaluation.

mod config;
mod optim;
mod run;

pub use config::{EmInit, MeanInit, ModelKind, TrainConfig};
pub use optim::{clip_gradients, Adam};
pub use run::{
    evaluate, flow_densities, score, train, train_into, Checkpoint, EpochRecord, EvalMetrics, Evaluation, ModelState, NamedTensor,
    RunRecord, TrainOutcome, CHECKPOINT_FORMAT,
};
