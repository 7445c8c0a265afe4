use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-subject values with mean and population standard deviation taken
/// over subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub per_subject: BTreeMap<String, f64>,
    pub mean: f64,
    pub std: f64,
}

impl SubjectMetrics {
    pub fn from_values(per_subject: BTreeMap<String, f64>) -> Result<Self> {
        if per_subject.is_empty() {
            return Err(Error::InvalidInput("no subjects to aggregate".into()));
        }
        let (mean, std) = mean_std(&per_subject.values().copied().collect::<Vec<_>>());
        Ok(SubjectMetrics {
            per_subject,
            mean,
            std,
        })
    }

    pub fn min(&self) -> f64 {
        self.per_subject.values().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Accuracy per subject from parallel prediction/truth/subject slices.
pub fn subject_accuracy(
    predictions: &[usize],
    truths: &[usize],
    subject_ids: &[String],
) -> Result<SubjectMetrics> {
    if predictions.len() != truths.len() || truths.len() != subject_ids.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} truths, {} subject ids",
            predictions.len(),
            truths.len(),
            subject_ids.len()
        )));
    }
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ((p, t), s) in predictions.iter().zip(truths).zip(subject_ids) {
        let e = counts.entry(s.clone()).or_default();
        e.0 += usize::from(p == t);
        e.1 += 1;
    }
    SubjectMetrics::from_values(
        counts
            .into_iter()
            .map(|(s, (c, n))| (s, c as f64 / n as f64))
            .collect(),
    )
}

/// Area under the ROC curve for `positives` (true = out-of-distribution)
/// scored higher. Equals the Mann-Whitney statistic with ties counted half.
pub fn auroc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            positives.len()
        )));
    }
    let n_pos = positives.iter().filter(|p| **p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput(
            "AUROC needs both positive and negative examples".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| positives[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Five-number summary with quartiles by linear interpolation between
/// order statistics (position `p * (n - 1)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn quartiles(values: &[f64]) -> Result<FiveNumber> {
    if values.is_empty() {
        return Err(Error::InvalidInput("quartiles of an empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(FiveNumber {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}
