//! Synthetic tripartite data with planted cluster structure.
//!
//! Users, items and rationales are each assigned to one of `n_clusters`
//! clusters (`index % n_clusters`). Each record:
//!
//! 1. draws a user uniformly;
//! 2. draws an item from the user's cluster with probability `item_affinity`,
//!    otherwise uniformly over all items;
//! 3. draws 1 rationale, or 2 with probability `second_rationale`. Each
//!    rationale comes from the user's cluster or the item's cluster (a fair
//!    coin when they differ), picked within the cluster by a Zipf law of
//!    exponent `zipf` over a seeded per-cluster popularity order.
//!
//! A model that recovers cluster membership and within-cluster popularity
//! ranks held-out rationales far above chance, which is what the ranking
//! tests rely on.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};

use crate::corpus::InteractionRecord;
use crate::error::{Error, Result};
use crate::seminit::EmbeddingTable;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_rationales: usize,
    pub n_clusters: usize,
    pub n_records: usize,
    pub item_affinity: f64,
    pub second_rationale: f64,
    pub zipf: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    /// 200 users, 100 items, 300 rationales, 5 clusters, about 5,000 triplets.
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 100,
            n_rationales: 300,
            n_clusters: 5,
            n_records: 3600,
            item_affinity: 0.9,
            second_rationale: 0.4,
            zipf: 1.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedData {
    pub records: Vec<InteractionRecord>,
    pub n_clusters: usize,
}

impl PlantedData {
    pub fn rationale_cluster(&self, id: &str) -> Option<usize> {
        id.strip_prefix('e')?.parse::<usize>().ok().map(|e| e % self.n_clusters)
    }

    pub fn triplet_count(&self) -> usize {
        self.records.iter().map(|r| r.rationale_ids.len()).sum()
    }
}

pub fn generate(cfg: &PlantedConfig) -> Result<PlantedData> {
    let c = cfg.n_clusters;
    if c == 0 || cfg.n_users < c || cfg.n_items < c || cfg.n_rationales < c {
        return Err(Error::invalid("every cluster needs at least one user, item and rationale"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut items_by_cluster = vec![Vec::new(); c];
    for i in 0..cfg.n_items {
        items_by_cluster[i % c].push(i);
    }
    // per-cluster popularity order and Zipf sampler over it
    let mut pools = Vec::with_capacity(c);
    for k in 0..c {
        let mut members: Vec<usize> = (k..cfg.n_rationales).step_by(c).collect();
        members.shuffle(&mut rng);
        let weights: Vec<f64> = (0..members.len())
            .map(|r| 1.0 / ((r + 1) as f64).powf(cfg.zipf))
            .collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;
        pools.push((members, dist));
    }

    let mut records = Vec::with_capacity(cfg.n_records);
    for _ in 0..cfg.n_records {
        let u = rng.gen_range(0..cfg.n_users);
        let uc = u % c;
        let i = if rng.gen_bool(cfg.item_affinity) {
            *items_by_cluster[uc].choose(&mut rng).unwrap()
        } else {
            rng.gen_range(0..cfg.n_items)
        };
        let ic = i % c;
        let k = if rng.gen_bool(cfg.second_rationale) { 2 } else { 1 };
        let mut rats: Vec<String> = Vec::with_capacity(k);
        while rats.len() < k {
            let cluster = if uc == ic || rng.gen_bool(0.5) { uc } else { ic };
            let (members, dist) = &pools[cluster];
            let id = format!("e{}", members[dist.sample(&mut rng)]);
            if !rats.contains(&id) {
                rats.push(id);
            }
        }
        records.push(InteractionRecord {
            user_id: format!("u{u}"),
            item_id: format!("i{i}"),
            rationale_ids: rats,
        });
    }
    Ok(PlantedData {
        records,
        n_clusters: c,
    })
}

/// Cluster-indicator vectors plus isotropic Gaussian noise, one per rationale id `e<n>`.
pub fn cluster_embeddings(
    n_rationales: usize,
    n_clusters: usize,
    dim: usize,
    noise: f64,
    seed: u64,
) -> Result<EmbeddingTable> {
    if dim < n_clusters {
        return Err(Error::invalid("embedding dim must cover the cluster indicators"));
    }
    let normal = Normal::new(0.0, noise).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = EmbeddingTable::new(dim);
    for e in 0..n_rationales {
        let mut v: Vec<f32> = (0..dim).map(|_| normal.sample(&mut rng) as f32).collect();
        v[e % n_clusters] += 1.0;
        table.insert(&format!("e{e}"), v)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_size_and_determinism() {
        let cfg = PlantedConfig::default();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        let n = a.triplet_count();
        assert!((4500..=5500).contains(&n), "{n} triplets");
    }

    #[test]
    fn rationales_follow_user_or_item_cluster() {
        let data = generate(&PlantedConfig::default()).unwrap();
        for r in &data.records {
            let uc = r.user_id[1..].parse::<usize>().unwrap() % 5;
            let ic = r.item_id[1..].parse::<usize>().unwrap() % 5;
            for e in &r.rationale_ids {
                let ec = data.rationale_cluster(e).unwrap();
                assert!(ec == uc || ec == ic);
            }
        }
    }

    #[test]
    fn embeddings_have_indicator() {
        let t = cluster_embeddings(10, 5, 8, 0.0, 1).unwrap();
        assert_eq!(t.get("e7").unwrap(), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
