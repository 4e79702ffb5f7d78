//! Trainable heads, losses, optimizer and the training loop.

pub mod adam;
pub mod features;
pub mod head;
pub mod loss;
pub mod model;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use features::{reference_features, PageFeatures, REFERENCE_DIM, WORDNESS_DIM};
pub use head::{EmbedHead, Mode, Trainable, WordnessHead};
pub use loss::{cosine_embedding_loss, logistic_loss, sigmoid, total_loss, LossWeights, PairLabel};
pub use model::SpotModel;
pub use train::{build_training_set, train, Minibatch, TrainConfig, TrainOutcome, Trainer, TrainingSet, Validator};
