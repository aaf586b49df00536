//! Deterministic k-means over unit embeddings.
//!
//! k-means++ seeding from a fixed RNG, Lloyd iterations until the largest
//! centroid movement drops below 1e-6 (or 100 iterations), and empty
//! clusters reseeded from the points farthest from their assigned
//! centroids so every cluster ends non-empty.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::Embedding;

const MOVEMENT_TOL: f64 = 1e-6;
const MAX_ITERS: usize = 100;

#[derive(Debug, Clone)]
pub struct KmeansResult {
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    /// Cluster centers, `c` rows of the input dimension.
    pub centroids: Vec<Vec<f64>>,
}

pub fn kmeans(features: &[Embedding], c: usize, seed: u64) -> Result<KmeansResult> {
    if c == 0 {
        return Err(Error::invalid("cluster count must be positive"));
    }
    if c > features.len() {
        return Err(Error::invalid(format!(
            "cannot form {} clusters from {} points",
            c,
            features.len()
        )));
    }
    let dim = features[0].dim();
    let points: Vec<Vec<f64>> = features
        .iter()
        .map(|e| e.values().iter().map(|v| *v as f64).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = plus_plus_init(&points, c, &mut rng);
    let mut assignments = vec![0usize; points.len()];

    for _ in 0..MAX_ITERS {
        // assignment step (ties go to the lowest cluster index)
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, cen) in centroids.iter().enumerate() {
                let d = sq_dist(p, cen);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assignments[i] = best;
        }

        // update step
        let mut sums = vec![vec![0.0f64; dim]; c];
        let mut counts = vec![0usize; c];
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            counts[a] += 1;
            for d in 0..dim {
                sums[a][d] += p[d];
            }
        }

        // reseed empty clusters from the points farthest from their centroid
        let empties: Vec<usize> = (0..c).filter(|j| counts[*j] == 0).collect();
        if !empties.is_empty() {
            let mut by_distance: Vec<(usize, f64)> = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, sq_dist(p, &centroids[assignments[i]])))
                .collect();
            by_distance.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (slot, empty) in empties.iter().enumerate() {
                let (idx, _) = by_distance[slot.min(by_distance.len() - 1)];
                let donor = assignments[idx];
                counts[donor] = counts[donor].saturating_sub(1);
                for d in 0..dim {
                    sums[donor][d] -= points[idx][d];
                }
                assignments[idx] = *empty;
                counts[*empty] = 1;
                sums[*empty] = points[idx].clone();
            }
        }

        let mut moved = 0.0f64;
        for j in 0..c {
            let n = counts[j].max(1) as f64;
            let mut shift = 0.0f64;
            for d in 0..dim {
                let new = sums[j][d] / n;
                shift += (new - centroids[j][d]).powi(2);
                centroids[j][d] = new;
            }
            moved = moved.max(shift.sqrt());
        }
        if moved < MOVEMENT_TOL {
            break;
        }
    }

    // final assignment against the converged centroids
    for (i, p) in points.iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (j, cen) in centroids.iter().enumerate() {
            let d = sq_dist(p, cen);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        assignments[i] = best;
    }
    repair_empty(&points, &mut assignments, &mut centroids);

    Ok(KmeansResult {
        assignments,
        centroids,
    })
}

/// k-means++: first center uniform, later centers drawn with probability
/// proportional to the squared distance to the nearest chosen center.
fn plus_plus_init(points: &[Vec<f64>], c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = Vec::with_capacity(c);
    let first = rng.gen_range(0..points.len());
    centroids.push(points[first].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // all remaining points coincide with chosen centers
            rng.gen_range(0..points.len())
        } else {
            WeightedIndex::new(d2.iter().map(|w| w.max(0.0)))
                .map(|w| w.sample(rng))
                .unwrap_or_else(|_| rng.gen_range(0..points.len()))
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.last().unwrap()));
        }
    }
    centroids
}

/// After the final assignment, move one farthest point into any cluster
/// that ended empty.
fn repair_empty(points: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>]) {
    let c = centroids.len();
    let mut counts = vec![0usize; c];
    for a in assignments.iter() {
        counts[*a] += 1;
    }
    let empties: Vec<usize> = (0..c).filter(|j| counts[*j] == 0).collect();
    if empties.is_empty() {
        return;
    }
    let mut by_distance: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, sq_dist(p, &centroids[assignments[i]])))
        .collect();
    by_distance.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (slot, empty) in empties.into_iter().enumerate() {
        let (idx, _) = by_distance[slot.min(by_distance.len() - 1)];
        if counts[assignments[idx]] > 1 {
            counts[assignments[idx]] -= 1;
            assignments[idx] = empty;
            counts[empty] = 1;
            centroids[empty] = points[idx].clone();
        }
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::l2_normalize;

    fn blob(center: &[f64], n: usize, spread: f64, seed: u64) -> Vec<Embedding> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: Vec<f64> = center
                    .iter()
                    .map(|c| c + rng.gen_range(-spread..spread))
                    .collect();
                l2_normalize(&v).unwrap()
            })
            .collect()
    }

    #[test]
    fn single_cluster_holds_everything() {
        let pts = blob(&[1.0, 0.0, 0.0], 20, 0.05, 1);
        let r = kmeans(&pts, 1, 0).unwrap();
        assert!(r.assignments.iter().all(|a| *a == 0));
        assert_eq!(r.centroids.len(), 1);
    }

    #[test]
    fn two_blobs_fully_separated() {
        let mut pts = blob(&[1.0, 0.0, 0.0], 30, 0.05, 2);
        pts.extend(blob(&[0.0, 1.0, 0.0], 30, 0.05, 3));
        let r = kmeans(&pts, 2, 7).unwrap();
        let first = r.assignments[0];
        assert!(r.assignments[..30].iter().all(|a| *a == first));
        assert!(r.assignments[30..].iter().all(|a| *a != first));
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let mut pts = blob(&[1.0, 0.2, 0.0], 40, 0.3, 4);
        pts.extend(blob(&[0.0, 0.9, 0.4], 40, 0.3, 5));
        let a = kmeans(&pts, 5, 11).unwrap();
        let b = kmeans(&pts, 5, 11).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn all_clusters_non_empty() {
        // duplicated points force collisions; clusters must still be non-empty
        let base = blob(&[0.5, 0.5, 0.0], 6, 0.01, 6);
        let mut pts = Vec::new();
        for _ in 0..5 {
            pts.extend(base.clone());
        }
        let r = kmeans(&pts, 6, 13).unwrap();
        let mut counts = vec![0usize; 6];
        for a in &r.assignments {
            counts[*a] += 1;
        }
        assert!(counts.iter().all(|c| *c > 0), "{:?}", counts);
    }

    #[test]
    fn rejects_more_clusters_than_points() {
        let pts = blob(&[1.0, 0.0, 0.0], 3, 0.05, 8);
        assert!(kmeans(&pts, 4, 0).is_err());
        assert!(kmeans(&pts, 0, 0).is_err());
    }
}
