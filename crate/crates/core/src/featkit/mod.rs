//! Engineered features, standardization and Gini importance ranking.

mod extratrees;
mod features;
mod scaler;

pub use extratrees::{gini_rank, FeatureRanking, DEFAULT_N_TREES};
pub use features::{
    extract_engineered, extract_matrix, extract_with_names, feature_names, mean_crossings,
    mean_spectral_energy, write_feature_csv, FeatureVector, FEATURES_PER_CHANNEL, FEATURE_NAMES,
};
pub use scaler::{apply_scaler, fit_scaler, FeatureScaler};
