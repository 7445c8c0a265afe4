//! Cross-entropy and triplet-loss training of the FCN encoder.

mod train;
mod triplet;

pub use train::{train_classifier, train_triplet, EpochRecord, LossKind, TrainConfig, TrainLog};
pub use triplet::{mine_random_triplets, mine_subject_triplets, triplet_loss, Triplet, TripletMiner};
