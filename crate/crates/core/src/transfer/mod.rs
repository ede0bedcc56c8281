//! Linear heads over precomputed feature vectors and their weighted ensemble.

pub mod ensemble;
pub mod features;
pub mod heads;

pub use ensemble::{ensemble_predict, normalize_weights, select_top_k, EnsembleSpec, Selection, Weighting};
pub use features::{read_feature_file, separable_features, write_feature_file, FeatureSet};
pub use heads::{train_head, train_softmax_head, train_svm_head, HeadHyper, HeadKind, LinearHead};
