use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ReferenceSet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    /// Ascending.
    pub neighbor_distances: Vec<f64>,
    pub neighbor_labels: Vec<usize>,
}

/// Higher means more out-of-distribution.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct OodScore {
    pub score: f64,
}

pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

fn check_query(reference: &ReferenceSet, query: &[f32], k: usize) -> Result<()> {
    if reference.is_empty() {
        return Err(Error::InvalidInput(format!(
            "reference set for subject {} is empty",
            reference.subject_id
        )));
    }
    if query.len() != reference.dim {
        return Err(Error::Shape(format!(
            "query has dimension {}, reference embeddings have {}",
            query.len(),
            reference.dim
        )));
    }
    if k == 0 || k > reference.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} with {} reference rows",
            reference.len()
        )));
    }
    Ok(())
}

/// The k nearest rows as (distance, label), ordered by distance, then label,
/// then row index.
fn nearest(reference: &ReferenceSet, query: &[f32], k: usize) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize, usize)> = (0..reference.len())
        .map(|i| {
            (
                squared_distance(reference.row(i), query).sqrt(),
                reference.labels[i],
                i,
            )
        })
        .collect();
    let cmp = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_by(cmp);
    all.into_iter().map(|(d, l, _)| (d, l)).collect()
}

/// Exact Euclidean k-NN with a uniform-weight vote. Ties between labels go
/// to the smaller summed neighbor distance, then to the lower label.
pub fn knn_classify(reference: &ReferenceSet, query: &[f32], k: usize) -> Result<Prediction> {
    check_query(reference, query, k)?;
    let nn = nearest(reference, query, k);
    let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for &(d, l) in &nn {
        let e = votes.entry(l).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d;
    }
    let label = votes
        .iter()
        .min_by(|(la, (ca, sa)), (lb, (cb, sb))| {
            cb.cmp(ca).then(sa.total_cmp(sb)).then(la.cmp(lb))
        })
        .map(|(l, _)| *l)
        .expect("k >= 1");
    Ok(Prediction {
        label,
        neighbor_distances: nn.iter().map(|p| p.0).collect(),
        neighbor_labels: nn.iter().map(|p| p.1).collect(),
    })
}

/// Mean distance to the k nearest reference rows.
pub fn ood_score(reference: &ReferenceSet, query: &[f32], k: usize) -> Result<OodScore> {
    check_query(reference, query, k)?;
    let nn = nearest(reference, query, k);
    Ok(OodScore {
        score: nn.iter().map(|p| p.0).sum::<f64>() / k as f64,
    })
}

/// One minus the largest class probability.
pub fn softmax_ood_score(probabilities: &[f32]) -> Result<OodScore> {
    if probabilities.is_empty() {
        return Err(Error::InvalidInput("empty probability vector".into()));
    }
    let max = probabilities.iter().fold(f32::NEG_INFINITY, |m, p| m.max(*p));
    Ok(OodScore {
        score: 1.0 - max as f64,
    })
}

/// Label of the nearest class mean; ties go to the lower label.
pub fn nearest_centroid_classify(reference: &ReferenceSet, query: &[f32]) -> Result<Prediction> {
    check_query(reference, query, 1)?;
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for i in 0..reference.len() {
        let e = sums
            .entry(reference.labels[i])
            .or_insert_with(|| (vec![0.0; reference.dim], 0));
        for (a, v) in e.0.iter_mut().zip(reference.row(i)) {
            *a += *v as f64;
        }
        e.1 += 1;
    }
    let (label, dist) = sums
        .iter()
        .map(|(l, (s, n))| {
            let d: f64 = s
                .iter()
                .zip(query)
                .map(|(a, q)| (a / *n as f64 - *q as f64).powi(2))
                .sum();
            (*l, d.sqrt())
        })
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("non-empty reference");
    Ok(Prediction {
        label,
        neighbor_distances: vec![dist],
        neighbor_labels: vec![label],
    })
}
