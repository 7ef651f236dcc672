//! Contrastive training: the negative-sampling objective, regularizers,
//! Adam and the epoch loop.

mod adam;
mod config;
mod loss;
mod step;
mod train;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::{GradientMethod, TrainConfig};
pub use loss::{ent_regularizer, nce_loss, neg_log_sigmoid, sigmoid};
pub use step::{
    batch_gradient, batch_loss, train_step, Batch, LossReport, ModelGradient, ParamLayout,
    MIN_HEAD_SCALE,
};
pub use train::{
    shifted_pmi_targets, split_holdout, train, write_history_csv, Checkpoint, EpochRecord,
    PmiTarget, TrainOutcome, Validation, HISTORY_HEADER, MIN_VALIDATION_COUNT,
};
