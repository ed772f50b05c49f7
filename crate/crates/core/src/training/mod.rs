//! Weakly-supervised training: cross-stream snippet partitioning, the
//! subspace losses built on it, and the two-phase training loop.

mod losses;
mod partition;
mod trainer;

pub use losses::{
    prototypes, residual_loss, subspace_cls_loss, total_subspace_loss, triplet_loss,
    LossWeights, Prototypes, SubspaceLosses, SubspaceMeans,
};
pub use partition::{partition_snippets, SnippetPartition};
pub use trainer::{train, train_dataset, train_from, EpochLog, TrainConfig, TrainOutput};
