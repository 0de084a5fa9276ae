//! Seeded planted-cluster interaction data for desk-scale experiments.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::RawInteractions;
use crate::{Error, Result};

/// Users and items are dealt round-robin into `num_clusters` blocks. Each
/// user draws `interactions_per_user` distinct items, each one from the
/// user's own block with probability `in_cluster_prob` and uniformly from the
/// whole catalog otherwise. A `test_fraction` of every user's items is held
/// out as test data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedClusters {
    pub num_users: usize,
    pub num_items: usize,
    pub num_clusters: usize,
    pub interactions_per_user: usize,
    pub in_cluster_prob: f64,
    pub test_fraction: f64,
}

impl Default for PlantedClusters {
    fn default() -> Self {
        Self {
            num_users: 200,
            num_items: 300,
            num_clusters: 10,
            interactions_per_user: 20,
            in_cluster_prob: 0.8,
            test_fraction: 0.2,
        }
    }
}

impl PlantedClusters {
    pub fn cluster_of_user(&self, u: usize) -> usize {
        u % self.num_clusters
    }

    pub fn cluster_of_item(&self, i: usize) -> usize {
        i % self.num_clusters
    }

    /// `(train, test)` keyed by dense ids.
    pub fn generate(&self, seed: u64) -> Result<(RawInteractions, RawInteractions)> {
        if self.num_clusters == 0
            || self.num_items < self.num_clusters
            || self.interactions_per_user > self.num_items
            || !(0.0..=1.0).contains(&self.in_cluster_prob)
            || !(0.0..1.0).contains(&self.test_fraction)
        {
            return Err(Error::InvalidConfig(alloc::format!(
                "unusable planted-cluster parameters: {self:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks: Vec<Vec<usize>> = (0..self.num_clusters)
            .map(|c| (c..self.num_items).step_by(self.num_clusters).collect())
            .collect();
        let held_out = libm::round(self.test_fraction * self.interactions_per_user as f64) as usize;

        let mut train = RawInteractions::new();
        let mut test = RawInteractions::new();
        for u in 0..self.num_users {
            let block = &blocks[self.cluster_of_user(u)];
            let mut chosen: Vec<usize> = Vec::with_capacity(self.interactions_per_user);
            while chosen.len() < self.interactions_per_user {
                let in_block = rng.gen_bool(self.in_cluster_prob)
                    && chosen
                        .iter()
                        .filter(|&&i| self.cluster_of_item(i) == self.cluster_of_user(u))
                        .count()
                        < block.len();
                let item = if in_block {
                    block[rng.gen_range(0..block.len())]
                } else {
                    rng.gen_range(0..self.num_items)
                };
                if !chosen.contains(&item) {
                    chosen.push(item);
                }
            }
            chosen.shuffle(&mut rng);
            let (test_items, train_items) = chosen.split_at(held_out.min(chosen.len() - 1));
            train.insert(u as u64, train_items.iter().map(|&i| i as u64));
            test.insert(u as u64, test_items.iter().map(|&i| i as u64));
        }
        Ok((train, test))
    }
}
