//! Mixture density networks: architecture, gradients, optimizer, training.

pub mod checkpoint;
pub mod network;
pub mod optim;
pub mod train;

pub use checkpoint::{Checkpoint, EnsembleCheckpoint};
pub use network::{
    backbone_features, decode_head, forward, forward_batch, grad_nll, head_outputs, mean_head_columns,
    mean_head_log_lik_grad, nll_loss, Dense, MdnArch, MdnParams,
};
pub use optim::{adamw_step, clip_gradients, AdamState, LrSchedule, TrainConfig};
pub use train::{
    predict_batch, predict_ensemble, train_ensemble, train_member, train_member_steps, train_member_traced, Dataset,
    MdnEnsemble, TrainedMember,
};
