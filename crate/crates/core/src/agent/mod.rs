//! Deep Q-learning agent with a jointly trained differential classifier.
//!
//! The network shares one encoder between a Q head (one value per action, the
//! exit action included) and a classifier head producing the belief over
//! pathologies. Both heads are trained from the same replay batch.

mod basd;
mod losses;
mod network;
mod optim;
mod policy;
mod replay;
mod train;

use thiserror::Error;

pub use basd::{basd_simulate_state, BasdSample, BasdTarget};
pub use losses::{classifier_loss, exit_targets, q_loss, q_loss_with_targets, q_targets, LossOutput};
pub use network::{soft_update, softmax_rows, ArchConfig, Dense, ForwardCache, Mlp, NetOutput, NetworkParams};
pub use optim::{Optimizer, OptimizerKind};
pub use policy::{argmax_masked, epsilon_greedy, GreedyPolicy, RandomQuestionPolicy};
pub use replay::{ReplayBuffer, ReplayEntry};
pub use train::{
    load_checkpoint, save_checkpoint, train, train_with_observer, write_train_log, Checkpoint, TrainConfig,
    TrainLogRow, TrainOutcome, CHECKPOINT_VERSION,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no valid action in mask")]
    EmptyMask,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] crate::environment::EnvError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}
