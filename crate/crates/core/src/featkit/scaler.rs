use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-feature standardization fitted on training rows.
///
/// Features whose training standard deviation is zero are flagged constant
/// and always map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl FeatureScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "scaler needs at least 2 training rows, got {}",
                rows.len()
            )));
        }
        let d = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::Shape(format!(
                "feature rows of length {} and {d}",
                r.len()
            )));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((acc, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        let constant = std
            .iter()
            .zip(&mean)
            .map(|(s, m)| *s <= 1e-12 * m.abs().max(1.0))
            .collect();
        Ok(FeatureScaler {
            mean,
            std,
            constant,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.dim() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} features, got {}",
                self.dim(),
                features.len()
            )));
        }
        Ok(features
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if self.constant[i] {
                    0.0
                } else {
                    (v - self.mean[i]) / self.std[i]
                }
            })
            .collect())
    }
}

pub fn fit_scaler(train_features: &[Vec<f64>]) -> Result<FeatureScaler> {
    FeatureScaler::fit(train_features)
}

pub fn apply_scaler(scaler: &FeatureScaler, features: &[f64]) -> Result<Vec<f64>> {
    scaler.apply(features)
}
