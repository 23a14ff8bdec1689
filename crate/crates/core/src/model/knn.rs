//! k-nearest-neighbour prediction in feature space.

use serde::{Deserialize, Serialize};

use crate::fingerprint::Values;
use crate::{Error, Result};

/// Distances below this count as an exact feature match.
pub const EXACT_MATCH_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    /// Position in the training set.
    pub index: usize,
    pub distance: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnPrediction {
    pub values: Values,
    pub neighbors: Vec<Neighbor>,
}

/// Inverse-distance weighted mean of the `k` nearest training fingerprints
/// (Euclidean distance; ties by training index). An exact match returns that
/// neighbour's fingerprint unchanged.
pub fn knn_predict(
    train_features: &[Vec<f64>],
    train_fingerprints: &[Values],
    query: &[f64],
    k: usize,
) -> Result<KnnPrediction> {
    if train_features.is_empty() {
        return Err(Error::invalid("knn: empty training set"));
    }
    if train_features.len() != train_fingerprints.len() {
        return Err(Error::invalid("knn: features and fingerprints are not aligned"));
    }
    if k == 0 || k > train_features.len() {
        return Err(Error::invalid(format!(
            "knn: k={k} must lie in 1..={}",
            train_features.len()
        )));
    }
    let mut dist: Vec<(usize, f64)> = Vec::with_capacity(train_features.len());
    for (i, f) in train_features.iter().enumerate() {
        if f.len() != query.len() {
            return Err(Error::invalid(format!(
                "knn: training row {i} has {} dims, query has {}",
                f.len(),
                query.len()
            )));
        }
        let d2: f64 = f.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        dist.push((i, d2.sqrt()));
    }
    dist.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    dist.truncate(k);

    if dist[0].1 < EXACT_MATCH_DISTANCE {
        let (index, distance) = dist[0];
        return Ok(KnnPrediction {
            values: train_fingerprints[index],
            neighbors: vec![Neighbor {
                index,
                distance,
                weight: 1.0,
            }],
        });
    }
    let inv: Vec<f64> = dist.iter().map(|(_, d)| 1.0 / d).collect();
    let total: f64 = inv.iter().sum();
    let neighbors: Vec<Neighbor> = dist
        .iter()
        .zip(&inv)
        .map(|(&(index, distance), w)| Neighbor {
            index,
            distance,
            weight: w / total,
        })
        .collect();
    let mut values = [0.0; crate::ATTRIBUTE_COUNT];
    for n in &neighbors {
        for (v, t) in values.iter_mut().zip(&train_fingerprints[n.index]) {
            *v += n.weight * t;
        }
    }
    Ok(KnnPrediction { values, neighbors })
}
