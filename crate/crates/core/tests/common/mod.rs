//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use mbrec::encoder::EmbeddingPair;
use mbrec::store::{BehaviorGraph, InteractionLog, Record, Schema};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random four-behavior log with at most `max_edges` records (before
/// deduplication). Timestamps are attached when `timestamps` is set.
pub fn random_log(r: &mut ChaCha8Rng, num_users: usize, num_items: usize, max_edges: usize, timestamps: bool) -> InteractionLog {
    let schema = Schema::four_stage();
    let n = r.gen_range(1..=max_edges);
    let records = (0..n)
        .map(|_| Record {
            user: r.gen_range(0..num_users),
            item: r.gen_range(0..num_items),
            // buys are over-represented so splits have material
            behavior: if r.gen_bool(0.4) { 3 } else { r.gen_range(0..3) },
            timestamp: timestamps.then(|| r.gen_range(0..50)),
        })
        .collect();
    InteractionLog::new(num_users, num_items, schema.behaviors, records).unwrap()
}

pub fn edge_set(log: &InteractionLog, behaviors: &[usize]) -> BTreeSet<(usize, usize)> {
    log.records()
        .iter()
        .filter(|r| behaviors.contains(&r.behavior))
        .map(|r| (r.user, r.item))
        .collect()
}

pub fn random_graph(r: &mut ChaCha8Rng, num_users: usize, num_items: usize, edges: usize) -> BehaviorGraph {
    let e: Vec<(usize, usize)> = (0..edges)
        .map(|_| (r.gen_range(0..num_users), r.gen_range(0..num_items)))
        .collect();
    BehaviorGraph::from_edges("g", num_users, num_items, e).unwrap()
}

pub fn random_table(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || r.gen_range(-1.0..1.0))
}

pub fn random_pair(r: &mut ChaCha8Rng, num_users: usize, num_items: usize, dim: usize) -> EmbeddingPair {
    EmbeddingPair::new(random_table(r, num_users, dim), random_table(r, num_items, dim)).unwrap()
}

/// Symmetric normalized adjacency of the stacked user/item node space.
pub fn dense_adjacency(g: &BehaviorGraph) -> Array2<f64> {
    let (nu, ni) = (g.num_users(), g.num_items());
    let mut a = Array2::zeros((nu + ni, nu + ni));
    for &(u, i) in g.edges() {
        let w = 1.0 / ((g.user_degrees()[u] * g.item_degrees()[i]) as f64).sqrt();
        a[[u, nu + i]] = w;
        a[[nu + i, u]] = w;
    }
    a
}

/// `(1/(L+1)) * sum_{l=0..L} A^l`, built with explicit matrix powers.
pub fn dense_operator(g: &BehaviorGraph, layers: usize) -> Array2<f64> {
    let a = dense_adjacency(g);
    let n = a.nrows();
    let mut power = Array2::<f64>::eye(n);
    let mut sum = power.clone();
    for _ in 0..layers {
        power = power.dot(&a);
        sum = sum + &power;
    }
    sum / (layers + 1) as f64
}

pub fn stack(p: &EmbeddingPair) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(0), &[p.users.view(), p.items.view()]).unwrap()
}

pub fn max_rel_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = a.iter().chain(b.iter()).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn power_law_exponent(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Median wall time in seconds of `reps` calls.
pub fn median_time<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    let mut t: Vec<f64> = (0..reps)
        .map(|_| {
            let s = std::time::Instant::now();
            f();
            s.elapsed().as_secs_f64()
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[reps / 2]
}
