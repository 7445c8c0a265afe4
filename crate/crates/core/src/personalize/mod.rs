//! Subject reference sets, k-NN classification and OOD scoring.

mod knn;
mod reference;

pub use knn::{
    knn_classify, nearest_centroid_classify, ood_score, softmax_ood_score, squared_distance,
    OodScore, Prediction,
};
pub use reference::{ReferenceBank, ReferenceSet};
