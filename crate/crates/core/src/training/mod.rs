//! Training machinery as framework-free numerical kernels: the
//! neutral-aware multi-similarity loss with its analytic gradient, the
//! plain multi-similarity baseline, k-means clustered batch mining,
//! year-wise augmentation scheduling, and a trainable linear head that
//! exercises the full recipe.

mod augment;
mod batching;
mod kmeans;
mod loss;
mod trainer;

pub use augment::{
    yearwise_augment, AugmentParams, AugmentRanges, AugmentationPlan,
};
pub use batching::{Batch, BatchSampler, BatchSpec, ClusterConfig};
pub use kmeans::{kmeans, KmeansResult};
pub use loss::{
    chain_grad_to_embeddings, grad_check, ms_loss, na_ms_loss, normalization_vjp,
    similarity_matrix, LossParams, RelationMatrix, SimilarityMatrix,
};
pub use trainer::{
    train_linear_head, AblationToggles, OptimizerConfig, TrainConfig, TrainLogEntry,
    TrainOutcome, TrainedHead,
};
