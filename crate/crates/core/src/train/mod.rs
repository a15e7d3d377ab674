//! Training data generation, losses and the supervised loops.

mod data;
mod fit;
mod loss;

pub use data::{
    converts_back, generate_selection_data, improvement_chain, jump_targets, perturb, trajectory, Dataset, DatasetKind,
    JumpExample, JumpOptions, SelectExample, SelectionChains, SelectionOptions, DATASET_VERSION, DEFAULT_MAX_TARGETS,
    DEFAULT_REPEATS, DEFAULT_STARTS, DEFAULT_TIERS,
};
pub use fit::{mean_loss, train, JumpSample, LossRow, SelectSample, TrainConfig, TrainReport, TrainSample};
pub use loss::{bce, closest_reference, jump_loss_value, loss_jump, loss_select, select_loss_value, PROB_CLAMP};
