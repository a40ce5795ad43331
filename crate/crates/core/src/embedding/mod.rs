//! Numerical kernels of the hashing objective.

mod loss;
mod optimize;
mod pearson;

pub use loss::{
    class_weights, contrastive_loss, negative_pair_weight, quantisation_loss, wsc_gradient,
    wsc_loss, ClassWeights, HashEmbedding, LossConfig, PairBatch,
};
pub use optimize::{optimize_embeddings, OptimizeOptions, OptimizeOutcome, PEARSON_GUARD};
pub use pearson::pearson_similarity;
