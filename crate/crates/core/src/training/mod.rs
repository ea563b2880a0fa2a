//! Losses, baselines and the minibatch RMSProp loop.

mod baseline;
mod loss;
mod trainer;

pub use baseline::{BaselineNet, BaselineValues, BaselineVars, Mlp};
pub use loss::{
    baseline_loss, baseline_term, classification_loss, classification_term, entropy_terms, entropy_vars,
    episode_loss, episode_loss_with, loss_breakdown, reinforce_loss, reinforce_term, EpisodeLoss,
    LossBreakdown, LossWeights,
};
pub use trainer::{
    evaluate_split, episode_gradients, read_train_log, sample_split, stream_seed, train, train_model, write_train_log, Ablation,
    TrainConfig, TrainError, TrainLogRow, TrainOutcome,
};
