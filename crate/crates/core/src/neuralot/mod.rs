//! Plug-and-play W2^2 estimators for multi-dimensional batches: a debiased
//! entropic Sinkhorn oracle and an ICNN semidual trainer with hand-written
//! reverse-mode gradients.

mod icnn;
mod sinkhorn;

pub use icnn::{
    fit_gradient_map, history_csv, icnn_forward, icnn_gradient, semidual_loss,
    semidual_param_grads, train_w2_estimator, train_w2_estimator_from, w2_estimate_on, AdamState,
    BatchSource, GaussianSource, IcnnParams, LossRecord, TrainConfig, TrainOutcome,
};
pub use sinkhorn::sinkhorn_w2;
