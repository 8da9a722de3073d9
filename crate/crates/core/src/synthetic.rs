//! Planted-cluster funnel data for end-to-end checks and demos.
//!
//! Users and items are split into clusters; users mostly interact inside
//! their own cluster with a popularity skew. A configurable share of buys is
//! preceded by a click (and sometimes a cart) on the same item, the rest
//! arrive without any auxiliary precursor. Users also browse items they
//! never buy.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::Result;
use crate::rng::{self, Stream};
use crate::store::{InteractionLog, Record, Schema};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub clusters: usize,
    /// Inclusive range of buys per user.
    pub buys_per_user: (usize, usize),
    /// Inclusive range of browse-only clicks per user.
    pub browse_per_user: (usize, usize),
    /// Share of buys with no click or cart on the item beforehand.
    pub unvisited_buy_share: f64,
    /// Probability that a preceded buy also has a cart event.
    pub cart_share: f64,
    /// Probability of drawing an item from the user's own cluster.
    pub in_cluster: f64,
    /// Exponent of the within-cluster popularity skew.
    pub popularity_skew: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_users: 500,
            num_items: 200,
            clusters: 2,
            buys_per_user: (4, 8),
            browse_per_user: (8, 16),
            unvisited_buy_share: 0.3,
            cart_share: 0.5,
            in_cluster: 0.9,
            popularity_skew: 0.8,
            seed: 0,
        }
    }
}

fn cluster_of(k: usize, n: usize, clusters: usize) -> usize {
    (k * clusters / n).min(clusters - 1)
}

/// Generates a click < cart < buy log with timestamps.
pub fn planted_clusters(cfg: &SyntheticConfig) -> Result<InteractionLog> {
    let mut rng = rng::stream(cfg.seed, Stream::Synthetic);
    let clusters = cfg.clusters.max(1);
    let members: Vec<Vec<usize>> = (0..clusters)
        .map(|c| (0..cfg.num_items).filter(|&i| cluster_of(i, cfg.num_items, clusters) == c).collect())
        .collect();
    let pickers: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|items| {
            let w: Vec<f64> = (0..items.len()).map(|k| 1.0 / ((k + 1) as f64).powf(cfg.popularity_skew)).collect();
            WeightedIndex::new(w).expect("non-empty cluster")
        })
        .collect();
    let schema = Schema::three_stage();
    let (click, cart, buy) = (0, 1, 2);

    let mut records = Vec::new();
    for user in 0..cfg.num_users {
        let home = cluster_of(user, cfg.num_users, clusters);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            let c = if clusters == 1 || rng.gen_bool(cfg.in_cluster) {
                home
            } else {
                (home + rng.gen_range(1..clusters)) % clusters
            };
            members[c][pickers[c].sample(rng)]
        };
        let n_buys = rng.gen_range(cfg.buys_per_user.0..=cfg.buys_per_user.1);
        let mut bought = Vec::with_capacity(n_buys);
        while bought.len() < n_buys && bought.len() < cfg.num_items {
            let i = draw(&mut rng);
            if !bought.contains(&i) {
                bought.push(i);
            }
        }
        let span = 100 * (bought.len() as i64 + 1);
        let n_browse = rng.gen_range(cfg.browse_per_user.0..=cfg.browse_per_user.1);
        for _ in 0..n_browse {
            let i = draw(&mut rng);
            if bought.contains(&i) {
                continue;
            }
            let t = rng.gen_range(0..span);
            records.push(Record { user, item: i, behavior: click, timestamp: Some(t) });
            if rng.gen_bool(0.2) {
                records.push(Record { user, item: i, behavior: cart, timestamp: Some(t + 1) });
            }
        }
        for (k, &i) in bought.iter().enumerate() {
            let t = 100 * (k as i64 + 1);
            if !rng.gen_bool(cfg.unvisited_buy_share) {
                records.push(Record { user, item: i, behavior: click, timestamp: Some(t - 50) });
                if rng.gen_bool(cfg.cart_share) {
                    records.push(Record { user, item: i, behavior: cart, timestamp: Some(t - 20) });
                }
            }
            records.push(Record { user, item: i, behavior: buy, timestamp: Some(t) });
        }
    }
    InteractionLog::new(cfg.num_users, cfg.num_items, schema.behaviors, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SyntheticConfig {
            num_users: 40,
            num_items: 30,
            ..Default::default()
        };
        let a = planted_clusters(&cfg).unwrap();
        assert_eq!(a, planted_clusters(&cfg).unwrap());
        assert_eq!(a.num_users(), 40);
        let buys = a.count(2);
        assert!((40 * 4..=40 * 8).contains(&buys));
    }

    #[test]
    fn unvisited_share_is_planted() {
        let log = planted_clusters(&SyntheticConfig::default()).unwrap();
        let index = crate::store::derive_visited_index(&log);
        let buys: Vec<&Record> = log.records().iter().filter(|r| r.behavior == 2).collect();
        let unvisited = buys.iter().filter(|r| !index.is_visited(r.user, r.item)).count() as f64;
        let share = unvisited / buys.len() as f64;
        assert!((share - 0.3).abs() < 0.03, "{share}");
    }
}
