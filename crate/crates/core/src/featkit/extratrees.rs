//! Extremely randomized trees, used only for Gini importance ranking.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_N_TREES: usize = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    /// Normalized mean decrease in Gini impurity; sums to 1.
    pub importance: Vec<f64>,
    /// Feature indices by descending importance, ties by lower index.
    pub order: Vec<usize>,
}

impl FeatureRanking {
    pub fn top(&self, d: usize) -> Vec<usize> {
        self.order.iter().take(d).copied().collect()
    }
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Grows one fully randomized tree and returns the unnormalized impurity
/// decrease credited to each feature.
fn grow_tree(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    k_candidates: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n_features = x[0].len();
    let total = y.len() as f64;
    let mut importance = vec![0.0; n_features];
    let mut features: Vec<usize> = (0..n_features).collect();
    let mut stack: Vec<Vec<usize>> = vec![(0..y.len()).collect()];
    let mut counts = vec![0usize; n_classes];
    let mut left_counts = vec![0usize; n_classes];

    while let Some(node) = stack.pop() {
        counts.iter_mut().for_each(|c| *c = 0);
        for &i in &node {
            counts[y[i]] += 1;
        }
        let n = node.len();
        if n < 2 || counts.iter().filter(|&&c| c > 0).count() < 2 {
            continue;
        }
        let node_gini = gini(&counts, n);

        // (decrease, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        let mut evaluated = 0;
        features.shuffle(rng);
        for &f in &features {
            if evaluated == k_candidates {
                break;
            }
            let (lo, hi) = node.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(x[i][f]), hi.max(x[i][f]))
            });
            if hi <= lo {
                continue;
            }
            evaluated += 1;
            let threshold = rng.random_range(lo..hi);
            left_counts.iter_mut().for_each(|c| *c = 0);
            let mut n_left = 0;
            for &i in &node {
                if x[i][f] <= threshold {
                    left_counts[y[i]] += 1;
                    n_left += 1;
                }
            }
            let n_right = n - n_left;
            let right_counts: Vec<usize> =
                counts.iter().zip(&left_counts).map(|(a, b)| a - b).collect();
            let child = (n_left as f64 * gini(&left_counts, n_left)
                + n_right as f64 * gini(&right_counts, n_right))
                / n as f64;
            let decrease = node_gini - child;
            if best.is_none_or(|(b, _, _)| decrease > b) {
                best = Some((decrease, f, threshold));
            }
        }
        let Some((decrease, f, threshold)) = best else {
            continue;
        };
        importance[f] += n as f64 / total * decrease;
        let (left, right): (Vec<usize>, Vec<usize>) =
            node.into_iter().partition(|&i| x[i][f] <= threshold);
        stack.push(right);
        stack.push(left);
    }
    importance
}

/// Ranks features by mean Gini importance over an Extra-Trees ensemble.
///
/// Each split draws `ceil(sqrt(n_features))` non-constant candidate features
/// and one uniform threshold per candidate; trees are grown to purity on the
/// full sample (no bootstrap). Tree `t` uses stream `t` of a ChaCha8 RNG
/// seeded with `seed`, so the result does not depend on thread count.
pub fn gini_rank(
    features: &[Vec<f64>],
    labels: &[usize],
    n_trees: usize,
    seed: u64,
) -> Result<FeatureRanking> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    if n_trees == 0 {
        return Err(Error::InvalidInput("need at least one tree".into()));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("ragged or empty feature rows".into()));
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    let mut present = vec![false; n_classes];
    labels.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::InvalidInput(
            "Gini ranking needs at least two classes".into(),
        ));
    }
    let k = (d as f64).sqrt().ceil() as usize;
    let per_tree: Vec<Vec<f64>> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut imp = grow_tree(features, labels, n_classes, k, &mut rng);
            let s: f64 = imp.iter().sum();
            if s > 0.0 {
                imp.iter_mut().for_each(|v| *v /= s);
            }
            imp
        })
        .collect();
    let mut importance = vec![0.0; d];
    for imp in &per_tree {
        for (a, b) in importance.iter_mut().zip(imp) {
            *a += b;
        }
    }
    let s: f64 = importance.iter().sum();
    if s > 0.0 {
        importance.iter_mut().for_each(|v| *v /= s);
    } else {
        importance.iter_mut().for_each(|v| *v = 1.0 / d as f64);
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    Ok(FeatureRanking { importance, order })
}
