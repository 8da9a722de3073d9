//! LightGCN propagation over a bipartite user/item graph.
//!
//! Each layer moves user rows to items and item rows to users with weight
//! `1/sqrt(deg_u * deg_i)`; the output is the uniform average of layers
//! `0..=L`. The stacked operator is symmetric, so the same routine
//! transports gradients back to the initial tables.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::store::BehaviorGraph;

/// A pair of user and item embedding tables of common width.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

impl EmbeddingPair {
    pub fn new(users: Array2<f64>, items: Array2<f64>) -> Result<Self> {
        if users.ncols() != items.ncols() {
            return Err(Error::Dimension(format!(
                "user width {} != item width {}",
                users.ncols(),
                items.ncols()
            )));
        }
        Ok(Self { users, items })
    }

    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        Self {
            users: Array2::zeros((num_users, dim)),
            items: Array2::zeros((num_items, dim)),
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.items.nrows()
    }

    pub fn dim(&self) -> usize {
        self.users.ncols()
    }

    pub fn same_shape(&self, other: &EmbeddingPair) -> bool {
        self.users.dim() == other.users.dim() && self.items.dim() == other.items.dim()
    }

    /// Frobenius inner product over both tables.
    pub fn inner(&self, other: &EmbeddingPair) -> f64 {
        (&self.users * &other.users).sum() + (&self.items * &other.items).sum()
    }

    pub fn scaled_add(&mut self, alpha: f64, other: &EmbeddingPair) {
        self.users.scaled_add(alpha, &other.users);
        self.items.scaled_add(alpha, &other.items);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.users *= alpha;
        self.items *= alpha;
    }

    pub fn is_finite(&self) -> bool {
        self.users.iter().chain(self.items.iter()).all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.users.iter().chain(self.items.iter()).all(|&v| v == 0.0)
    }

    /// Rounds every entry through `f32`.
    pub fn round_to_f32(&mut self) {
        self.users.mapv_inplace(|v| v as f32 as f64);
        self.items.mapv_inplace(|v| v as f32 as f64);
    }
}

/// Compressed adjacency in one direction.
#[derive(Debug, Clone, PartialEq)]
struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

impl Adjacency {
    fn row(&self, k: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.offsets[k], self.offsets[k + 1]);
        (&self.targets[lo..hi], &self.weights[lo..hi])
    }
}

/// Degree-normalized propagation operator for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationPlan {
    label: String,
    num_users: usize,
    num_items: usize,
    layers: usize,
    user_to_items: Adjacency,
    item_to_users: Adjacency,
}

impl PropagationPlan {
    pub fn prepare(graph: &BehaviorGraph, layers: usize) -> Self {
        let du = graph.user_degrees();
        let di = graph.item_degrees();
        let weight = |u: usize, i: usize| 1.0 / ((du[u] as f64) * (di[i] as f64)).sqrt();

        // Edges are sorted by (user, item), which is already user-major CSR.
        let mut offsets = vec![0; graph.num_users() + 1];
        for &(u, _) in graph.edges() {
            offsets[u + 1] += 1;
        }
        for k in 0..graph.num_users() {
            offsets[k + 1] += offsets[k];
        }
        let user_to_items = Adjacency {
            offsets,
            targets: graph.edges().iter().map(|&(_, i)| i).collect(),
            weights: graph.edges().iter().map(|&(u, i)| weight(u, i)).collect(),
        };

        let mut by_item: Vec<(usize, usize)> = graph.edges().iter().map(|&(u, i)| (i, u)).collect();
        by_item.sort_unstable();
        let mut offsets = vec![0; graph.num_items() + 1];
        for &(i, _) in &by_item {
            offsets[i + 1] += 1;
        }
        for k in 0..graph.num_items() {
            offsets[k + 1] += offsets[k];
        }
        let item_to_users = Adjacency {
            offsets,
            targets: by_item.iter().map(|&(_, u)| u).collect(),
            weights: by_item.iter().map(|&(i, u)| weight(u, i)).collect(),
        };

        Self {
            label: graph.label().to_string(),
            num_users: graph.num_users(),
            num_items: graph.num_items(),
            layers,
            user_to_items,
            item_to_users,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.user_to_items.targets.len()
    }

    /// Normalization coefficient of edge `(u, i)`, if present.
    pub fn coefficient(&self, u: usize, i: usize) -> Option<f64> {
        let (items, weights) = self.user_to_items.row(u);
        items.binary_search(&i).ok().map(|k| weights[k])
    }

    /// All `(user, item, coefficient)` triples, user-major.
    pub fn coefficients(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_users).flat_map(move |u| {
            let (items, weights) = self.user_to_items.row(u);
            items.iter().zip(weights).map(move |(&i, &w)| (u, i, w))
        })
    }

    fn check(&self, x: &EmbeddingPair) -> Result<()> {
        if x.num_users() != self.num_users || x.num_items() != self.num_items {
            return Err(Error::Dimension(format!(
                "plan `{}` is {}x{}, tables are {}x{}",
                self.label,
                self.num_users,
                self.num_items,
                x.num_users(),
                x.num_items()
            )));
        }
        Ok(())
    }

    /// `(1/(L+1)) * sum_{l=0..L} A^l x` for the stacked bipartite operator `A`.
    pub fn propagate(&self, init: &EmbeddingPair) -> Result<EmbeddingPair> {
        self.check(init)?;
        let d = init.dim();
        let mut acc = init.clone();
        let mut prev = init.clone();
        for _ in 0..self.layers {
            let mut next = EmbeddingPair::zeros(self.num_users, self.num_items, d);
            gather(&self.user_to_items, &prev.items, &mut next.users);
            gather(&self.item_to_users, &prev.users, &mut next.items);
            acc.scaled_add(1.0, &next);
            prev = next;
        }
        acc.scale(1.0 / (self.layers as f64 + 1.0));
        Ok(acc)
    }

    /// Gradient with respect to the initial tables given the gradient with
    /// respect to [`PropagationPlan::propagate`]'s output.
    pub fn transport_gradient(&self, out_grad: &EmbeddingPair) -> Result<EmbeddingPair> {
        // The operator is symmetric: its adjoint is itself.
        self.propagate(out_grad)
    }
}

fn gather(adj: &Adjacency, src: &Array2<f64>, dst: &mut Array2<f64>) {
    Zip::indexed(dst.rows_mut()).for_each(|k, mut row| {
        let (targets, weights) = adj.row(k);
        for (&t, &w) in targets.iter().zip(weights) {
            row.scaled_add(w, &src.row(t));
        }
    });
}
