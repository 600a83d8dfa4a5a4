//! The local learner: an MLP classifier trained by minibatch SGD.
//!
//! Strategies never touch the optimizer directly. They plug in through a
//! [`GradientModifier`], applied to every raw gradient before the update.

mod mlp;
mod params;
mod train;

pub use mlp::{
    argmax, cross_entropy, evaluate, forward, init_params, loss_and_gradient, Batch, Evaluation,
    LayerLayout, MlpConfig,
};
pub use params::{read_checkpoint, write_checkpoint, ParameterVector};
pub use train::{
    local_train, GradientModifier, Identity, LocalObjective, LocalTrainOutcome, MlpObjective,
    QuadraticObjective, TrainSpec,
};
