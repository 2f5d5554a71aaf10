//! Shallow feed-forward regressor mapping ADoA features to a 2D position.
//!
//! Written from scratch on purpose: the network is the artifact under study,
//! sized for resource-constrained hardware (hundreds of parameters, two
//! hidden ReLU layers), and every training detail (initialization, dropout,
//! Adam, early stopping) must be inspectable and deterministic. Layer widths
//! follow a fixed rule of the roster size and a node factor `k`; see
//! [`layer_sizes`].

mod model;
mod optim;
mod train;
mod tune;

pub use model::{
    backward, layer_sizes, mse_loss, ForwardCache, LayerDims, Matrix, Mode, Model, Params,
    TrainMeta, REFERENCE_RULE,
};
pub use optim::Adam;
pub use train::{best_val_mse, train, EpochStats, TrainConfig};
pub use tune::{learning_rate_ladder, tune, LeaderboardEntry, TuneGrid};
