//! Clipped PPO over token trajectories: advantages, losses, the rolling
//! replay buffer, the update loop and checkpoints.

mod buffer;
mod checkpoint;
mod gae;
mod loss;
mod optim;
mod trainer;

pub use buffer::{BufferRecord, ReplayBuffer};
pub use checkpoint::{sha256_hex, Checkpoint, RngState, CHECKPOINT_VERSION};
pub use gae::{discounted_returns, gae, lambda_returns, standardize, td_residuals, STD_FLOOR};
pub use loss::{
    policy_surrogate, surrogate_on_tape, total_loss, value_loss, value_term_on_tape,
    ValueLossMode,
};
pub use optim::AdamW;
pub use trainer::{Trainer, TrainerConfig, UpdateDiagnostics, TRAIN_LOG_HEADER};
