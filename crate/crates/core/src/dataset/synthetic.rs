//! Planted low-rank preference data for experiments and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};

use super::InteractionSet;

#[derive(Clone, Debug)]
pub struct PlantedFactor {
    pub num_users: usize,
    pub num_items: usize,
    pub rank: usize,
    /// Mean interactions per user; per-user counts vary uniformly in ±50%.
    pub mean_interactions: usize,
    /// Scale of the latent affinity relative to the Gumbel noise.
    pub signal: f64,
    /// Exponent of the item popularity offset (0 disables it).
    pub popularity: f64,
}

impl Default for PlantedFactor {
    fn default() -> Self {
        Self {
            num_users: 500,
            num_items: 1000,
            rank: 8,
            mean_interactions: 30,
            signal: 2.0,
            popularity: 0.5,
        }
    }
}

impl PlantedFactor {
    /// Each user draws items without replacement with probability
    /// proportional to `exp(signal · <p_u, q_i> / sqrt(rank) + popularity_i)`
    /// (Gumbel top-k sampling).
    pub fn generate(&self, seed: u64) -> InteractionSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factors = |n: usize| -> Vec<f64> {
            (0..n * self.rank).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let users = factors(self.num_users);
        let items = factors(self.num_items);
        let pop: Vec<f64> = (0..self.num_items)
            .map(|i| -self.popularity * ((i % 97 + 1) as f64).ln())
            .collect();
        let scale = self.signal / (self.rank as f64).sqrt();
        let gumbel = Gumbel::new(0.0, 1.0).expect("valid gumbel");

        let mut pairs = Vec::new();
        let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(self.num_items);
        for u in 0..self.num_users {
            let pu = &users[u * self.rank..(u + 1) * self.rank];
            let lo = (self.mean_interactions / 2).max(1);
            let hi = (self.mean_interactions * 3 / 2).max(lo + 1);
            let k = rng.gen_range(lo..hi).min(self.num_items - 1);
            keyed.clear();
            for i in 0..self.num_items {
                let qi = &items[i * self.rank..(i + 1) * self.rank];
                let affinity: f64 = pu.iter().zip(qi).map(|(a, b)| a * b).sum();
                keyed.push((scale * affinity + pop[i] + gumbel.sample(&mut rng), i));
            }
            keyed.select_nth_unstable_by(k, |a, b| b.0.total_cmp(&a.0));
            pairs.extend(keyed[..k].iter().map(|&(_, i)| (u, i)));
        }
        InteractionSet::from_pairs(self.num_users, self.num_items, pairs).expect("indices in range")
    }
}
