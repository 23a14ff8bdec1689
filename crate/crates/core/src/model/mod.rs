//! Fingerprint predictors: the MLP and the k-nearest-neighbour baseline,
//! plus the train/test split, augmentation selection and checkpoint format.

pub mod augment;
pub mod checkpoint;
pub mod knn;
pub mod mlp;
pub mod split;
pub mod train;

pub use augment::{augment_indices, AugmentationPolicy, VariantInfo, VariantPlan};
pub use knn::{knn_predict, KnnPrediction, Neighbor};
pub use mlp::{gradient_check, mlp_forward, predict_values, Gradients, MlpModel, MlpSpec, TrainingSummary};
pub use split::{stratified_split, SplitSpec};
pub use train::{mlp_train, mlp_train_samples, TrainConfig, TrainingSample};
