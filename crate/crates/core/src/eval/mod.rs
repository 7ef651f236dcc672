//! Intrinsic and extrinsic evaluation of trained embeddings.

mod classify;
mod neighbors;
mod rank;
mod similarity;

pub use classify::{
    features, label_index, logreg_train_eval, read_labeled_texts, state_features, FeatureTable,
    LOGREG_ITERATIONS, LOGREG_L2, LOGREG_STEP,
};
pub use neighbors::nearest_neighbors;
pub use rank::{fractional_ranks, spearman};
pub use similarity::{
    evaluate_similarity, EvalReport, SimilarityDataset, SimilarityMeasure, SimilarityPair,
};
