//! Clustered batch mining: every batch is drawn from a single feature-space
//! cluster, and consecutive batches use different clusters whenever more
//! than one cluster is usable. Clusters with fewer regions than a batch
//! needs are topped up with members of the nearest other centroids.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::RegionId;
use crate::training::kmeans::KmeansResult;

/// Clustering cadence for batch mining.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Number of clusters C.
    pub num_clusters: usize,
    /// Recluster every this many training iterations.
    pub refresh_every: usize,
    /// Features for clustering come from this single year.
    pub reference_year: u16,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            num_clusters: 200,
            refresh_every: 5000,
            reference_year: 2021,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 || self.refresh_every == 0 {
            return Err(Error::invalid("num_clusters and refresh_every must be positive"));
        }
        Ok(())
    }
}

/// Batch geometry: BS = quadruplets_per_batch * images_per_quadruplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub quadruplets_per_batch: usize,
    pub images_per_quadruplet: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            quadruplets_per_batch: 32,
            images_per_quadruplet: 4,
        }
    }
}

impl BatchSpec {
    pub fn batch_size(&self) -> usize {
        self.quadruplets_per_batch * self.images_per_quadruplet
    }

    pub fn validate(&self) -> Result<()> {
        if self.quadruplets_per_batch == 0 || self.images_per_quadruplet == 0 {
            return Err(Error::invalid("batch spec entries must be positive"));
        }
        Ok(())
    }
}

/// One emitted batch: the source cluster and the sampled regions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub cluster_id: usize,
    pub regions: Vec<RegionId>,
}

/// Draws single-cluster batches, avoiding immediate cluster repetition.
pub struct BatchSampler {
    /// Per cluster: sampling pool (own members first, then top-up).
    pools: Vec<Vec<usize>>,
    regions: Vec<RegionId>,
    quadruplets_per_batch: usize,
    eligible: Vec<usize>,
    last_cluster: Option<usize>,
}

impl BatchSampler {
    pub fn new(
        clustering: &KmeansResult,
        regions: &[RegionId],
        spec: &BatchSpec,
    ) -> Result<Self> {
        spec.validate()?;
        if clustering.assignments.len() != regions.len() {
            return Err(Error::invalid(
                "cluster assignments must cover exactly the region list",
            ));
        }
        if regions.len() < 2 {
            return Err(Error::invalid(
                "at least two regions are needed so batches contain negatives",
            ));
        }
        let c = clustering.centroids.len();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
        for (i, a) in clustering.assignments.iter().enumerate() {
            members[*a].push(i);
        }

        // top up small clusters from nearest centroids so each pool can
        // fill a batch (or exhausts the region list)
        let want = spec.quadruplets_per_batch.max(2);
        let mut pools = Vec::with_capacity(c);
        for j in 0..c {
            let mut pool = members[j].clone();
            if pool.len() < want {
                let mut order: Vec<usize> = (0..c).filter(|k| *k != j).collect();
                order.sort_by(|&a, &b| {
                    let da = centroid_dist(&clustering.centroids[j], &clustering.centroids[a]);
                    let db = centroid_dist(&clustering.centroids[j], &clustering.centroids[b]);
                    da.total_cmp(&db).then(a.cmp(&b))
                });
                for k in order {
                    for m in &members[k] {
                        if pool.len() >= want {
                            break;
                        }
                        pool.push(*m);
                    }
                    if pool.len() >= want {
                        break;
                    }
                }
            }
            pools.push(pool);
        }

        let eligible: Vec<usize> = (0..c).filter(|j| pools[*j].len() >= 2).collect();
        if eligible.is_empty() {
            return Err(Error::invalid("no cluster can produce a two-region batch"));
        }
        Ok(Self {
            pools,
            regions: regions.to_vec(),
            quadruplets_per_batch: spec.quadruplets_per_batch,
            eligible,
            last_cluster: None,
        })
    }

    /// Sample the next batch. A batch holds min(quadruplets_per_batch,
    /// pool size) distinct regions, all from one cluster's pool.
    pub fn next_batch(&mut self, rng: &mut impl Rng) -> Batch {
        let cluster_id = {
            let candidates: Vec<usize> = match self.last_cluster {
                Some(last) if self.eligible.len() > 1 => self
                    .eligible
                    .iter()
                    .copied()
                    .filter(|j| *j != last)
                    .collect(),
                _ => self.eligible.clone(),
            };
            candidates[rng.gen_range(0..candidates.len())]
        };
        self.last_cluster = Some(cluster_id);
        let pool = &self.pools[cluster_id];
        let take = self.quadruplets_per_batch.min(pool.len());
        let picked: Vec<usize> = pool
            .choose_multiple(rng, take)
            .copied()
            .collect();
        Batch {
            cluster_id,
            regions: picked.iter().map(|i| self.regions[*i]).collect(),
        }
    }
}

/// Uniform random batches over all regions; the clustered-off ablation arm.
pub struct RandomBatchSampler {
    regions: Vec<RegionId>,
    quadruplets_per_batch: usize,
}

impl RandomBatchSampler {
    pub fn new(regions: &[RegionId], spec: &BatchSpec) -> Result<Self> {
        spec.validate()?;
        if regions.len() < 2 {
            return Err(Error::invalid(
                "at least two regions are needed so batches contain negatives",
            ));
        }
        Ok(Self {
            regions: regions.to_vec(),
            quadruplets_per_batch: spec.quadruplets_per_batch,
        })
    }

    pub fn next_batch(&self, rng: &mut impl Rng) -> Vec<RegionId> {
        let take = self.quadruplets_per_batch.min(self.regions.len());
        self.regions
            .choose_multiple(rng, take)
            .copied()
            .collect()
    }
}

fn centroid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::l2_normalize;
    use crate::training::kmeans::kmeans;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fake_regions(n: usize) -> Vec<RegionId> {
        (0..n).map(|i| RegionId::new(9, i as u32, 0)).collect()
    }

    fn clustered(n: usize, c: usize) -> (KmeansResult, Vec<RegionId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<_> = (0..n)
            .map(|i| {
                let center = (i % c) as f64;
                l2_normalize(&[
                    (center * 2.0 + 1.0) + rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                    1.0,
                ])
                .unwrap()
            })
            .collect();
        (kmeans(&pts, c, 3).unwrap(), fake_regions(n))
    }

    #[test]
    fn batches_are_single_cluster_with_distinct_regions() {
        let (km, regions) = clustered(60, 5);
        let spec = BatchSpec {
            quadruplets_per_batch: 8,
            images_per_quadruplet: 4,
        };
        let mut sampler = BatchSampler::new(&km, &regions, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let b = sampler.next_batch(&mut rng);
            let mut sorted = b.regions.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), b.regions.len(), "regions must be distinct");
            assert!(b.regions.len() >= 2);
            // every region in the batch belongs to the cluster's pool
            for r in &b.regions {
                let idx = regions.iter().position(|x| x == r).unwrap();
                assert!(sampler.pools[b.cluster_id].contains(&idx));
            }
        }
    }

    #[test]
    fn consecutive_batches_change_cluster() {
        let (km, regions) = clustered(200, 10);
        let spec = BatchSpec {
            quadruplets_per_batch: 8,
            images_per_quadruplet: 4,
        };
        let mut sampler = BatchSampler::new(&km, &regions, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ids: Vec<usize> = (0..10).map(|_| sampler.next_batch(&mut rng).cluster_id).collect();
        let distinct: std::collections::HashSet<_> = ids.iter().collect();
        assert!(distinct.len() >= 2, "{:?}", ids);
        for w in ids.windows(2) {
            assert_ne!(w[0], w[1], "immediate repetition: {:?}", ids);
        }
    }

    #[test]
    fn degenerate_single_cluster_still_emits() {
        let (km, regions) = clustered(12, 1);
        let spec = BatchSpec {
            quadruplets_per_batch: 4,
            images_per_quadruplet: 4,
        };
        let mut sampler = BatchSampler::new(&km, &regions, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let b = sampler.next_batch(&mut rng);
            assert_eq!(b.cluster_id, 0);
            assert_eq!(b.regions.len(), 4);
        }
    }

    #[test]
    fn small_clusters_topped_up_to_batch_size() {
        // 3 clusters of 2, 2, 26 members; batches of 8 must still fill
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<_> = (0..30)
            .map(|i| {
                let c = match i {
                    0 | 1 => 0.0,
                    2 | 3 => 4.0,
                    _ => 8.0,
                };
                l2_normalize(&[c + rng.gen_range(-0.01..0.01), 1.0]).unwrap()
            })
            .collect();
        let km = kmeans(&pts, 3, 17).unwrap();
        let regions = fake_regions(30);
        let spec = BatchSpec {
            quadruplets_per_batch: 8,
            images_per_quadruplet: 4,
        };
        let mut sampler = BatchSampler::new(&km, &regions, &spec).unwrap();
        for _ in 0..20 {
            let b = sampler.next_batch(&mut rng);
            assert_eq!(b.regions.len(), 8);
        }
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let (km, regions) = clustered(100, 6);
        let spec = BatchSpec::default();
        let mut s1 = BatchSampler::new(&km, &regions, &spec).unwrap();
        let mut s2 = BatchSampler::new(&km, &regions, &spec).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(77);
        let mut r2 = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let a = s1.next_batch(&mut r1);
            let b = s2.next_batch(&mut r2);
            assert_eq!(a.cluster_id, b.cluster_id);
            assert_eq!(a.regions, b.regions);
        }
    }
}
