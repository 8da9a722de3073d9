//! The two experts and the hard gate that picks between them.
//!
//! An expert owns a global pair of initial tables (propagated over the union
//! graph) and a local pair (propagated over every behavior graph and
//! averaged). The visited expert additionally encodes its local tables over
//! the visited-purchase edges `V`; the unvisited expert encodes its global
//! tables over the remaining edges `R`.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1};
use rand::Rng;

use crate::encoder::{EmbeddingPair, PropagationPlan};
use crate::error::{Error, Result};
use crate::evaluator::Scorer;
use crate::store::{self, InteractionLog, ItemKind, VisitedIndex};

pub const GLOBAL: &str = "global";
pub const VISITED_PARTITION: &str = "V";
pub const REMAINING_PARTITION: &str = "R";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Visited,
    Unvisited,
}

impl Role {
    /// Label of the contrastive partition graph this expert encodes.
    pub fn partition_label(self) -> &'static str {
        match self {
            Role::Visited => VISITED_PARTITION,
            Role::Unvisited => REMAINING_PARTITION,
        }
    }

    pub fn item_kind(self) -> ItemKind {
        match self {
            Role::Visited => ItemKind::Visited,
            Role::Unvisited => ItemKind::Unvisited,
        }
    }
}

/// Trainable state of one expert.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertParams {
    pub global: EmbeddingPair,
    pub local: EmbeddingPair,
    lambda: f64,
    role: Role,
}

impl ExpertParams {
    pub fn new(global: EmbeddingPair, local: EmbeddingPair, lambda: f64, role: Role) -> Result<Self> {
        check_lambda(lambda)?;
        if !global.same_shape(&local) {
            return Err(Error::Dimension("global and local tables differ in shape".into()));
        }
        Ok(Self {
            global,
            local,
            lambda,
            role,
        })
    }

    /// Xavier-uniform initialization of all four tables.
    pub fn xavier<R: Rng>(
        num_users: usize,
        num_items: usize,
        dim: usize,
        lambda: f64,
        role: Role,
        rng: &mut R,
    ) -> Result<Self> {
        let global = EmbeddingPair::new(xavier(num_users, dim, rng), xavier(num_items, dim, rng))?;
        let local = EmbeddingPair::new(xavier(num_users, dim, rng), xavier(num_items, dim, rng))?;
        Self::new(global, local, lambda, role)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn tables(&self) -> [&Array2<f64>; 4] {
        [&self.global.users, &self.global.items, &self.local.users, &self.local.items]
    }

    pub fn tables_mut(&mut self) -> [&mut Array2<f64>; 4] {
        [
            &mut self.global.users,
            &mut self.global.items,
            &mut self.local.users,
            &mut self.local.items,
        ]
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Config(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    Ok(())
}

/// Xavier-uniform table of shape `rows x dim`.
pub fn xavier<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (rows + dim) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, dim), || rng.gen_range(-bound..bound))
}

/// Propagation plans keyed by graph label: `global`, one per behavior,
/// `V` and `R`.
#[derive(Debug, Clone)]
pub struct PlanSet {
    behaviors: Vec<String>,
    plans: HashMap<String, PropagationPlan>,
}

impl PlanSet {
    pub fn new(behaviors: Vec<String>, plans: HashMap<String, PropagationPlan>) -> Self {
        Self { behaviors, plans }
    }

    /// Builds every plan the model needs from a training log.
    pub fn from_train(train: &InteractionLog, layers: usize) -> Result<Self> {
        let graphs = store::build_all_behavior_graphs(train)?;
        let global = store::build_global_graph(&graphs)?;
        let (v, r) = store::derive_ssl_partitions(train)?;
        let mut plans = HashMap::new();
        for g in graphs.iter().chain([&global, &v, &r]) {
            plans.insert(g.label().to_string(), PropagationPlan::prepare(g, layers));
        }
        Ok(Self::new(train.behaviors().to_vec(), plans))
    }

    pub fn behaviors(&self) -> &[String] {
        &self.behaviors
    }

    pub fn get(&self, label: &str) -> Result<&PropagationPlan> {
        self.plans.get(label).ok_or_else(|| Error::MissingPlan(label.to_string()))
    }

    pub fn insert(&mut self, plan: PropagationPlan) {
        self.plans.insert(plan.label().to_string(), plan);
    }

    pub fn total_edges(&self) -> usize {
        self.plans.values().map(PropagationPlan::num_edges).sum()
    }
}

/// All views of one expert computed from a single parameter snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExpert {
    pub role: Role,
    pub lambda: f64,
    /// Parameter version the views were computed from.
    pub version: u64,
    pub global: EmbeddingPair,
    pub local: EmbeddingPair,
    pub per_behavior: Vec<EmbeddingPair>,
    pub partition: EmbeddingPair,
}

pub fn encode(params: &ExpertParams, plans: &PlanSet, version: u64) -> Result<EncodedExpert> {
    let global = plans.get(GLOBAL)?.propagate(&params.global)?;
    let per_behavior = plans
        .behaviors()
        .iter()
        .map(|b| plans.get(b)?.propagate(&params.local))
        .collect::<Result<Vec<_>>>()?;
    let mut local = EmbeddingPair::zeros(params.local.num_users(), params.local.num_items(), params.local.dim());
    let share = 1.0 / per_behavior.len() as f64;
    for view in &per_behavior {
        local.scaled_add(share, view);
    }
    let partition = match params.role {
        Role::Visited => plans.get(VISITED_PARTITION)?.propagate(&params.local)?,
        Role::Unvisited => plans.get(REMAINING_PARTITION)?.propagate(&params.global)?,
    };
    Ok(EncodedExpert {
        role: params.role,
        lambda: params.lambda,
        version,
        global,
        local,
        per_behavior,
        partition,
    })
}

#[inline]
pub(crate) fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

impl EncodedExpert {
    fn check(&self, u: usize, i: usize) -> Result<()> {
        if u >= self.global.num_users() || i >= self.global.num_items() {
            return Err(Error::Index(format!(
                "({u}, {i}) outside {}x{}",
                self.global.num_users(),
                self.global.num_items()
            )));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn score_unchecked(&self, lambda: f64, u: usize, i: usize) -> f64 {
        let g = dot(self.global.users.row(u), self.global.items.row(i));
        let l = dot(self.local.users.row(u), self.local.items.row(i));
        lambda * g + (1.0 - lambda) * l
    }

    /// Scores every item for `u`; identical per entry to [`score`].
    pub fn score_all(&self, lambda: f64, u: usize) -> Vec<f64> {
        (0..self.global.num_items()).map(|i| self.score_unchecked(lambda, u, i)).collect()
    }
}

/// `lambda * <global_u, global_i> + (1 - lambda) * <local_u, local_i>`.
pub fn score(enc: &EncodedExpert, lambda: f64, u: usize, i: usize) -> Result<f64> {
    enc.check(u, i)?;
    Ok(enc.score_unchecked(lambda, u, i))
}

pub fn score_slate(enc: &EncodedExpert, lambda: f64, u: usize, items: &[usize]) -> Result<Vec<f64>> {
    items.iter().map(|&i| score(enc, lambda, u, i)).collect()
}

/// How the two expert scores are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// Exactly one expert per pair, chosen by visited membership.
    Hard,
    /// Mean of both experts; ablation only.
    Average,
}

/// Lambda of the visited and unvisited expert.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas {
    pub visited: f64,
    pub unvisited: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            visited: 0.5,
            unvisited: 0.5,
        }
    }
}

pub fn gated_score(
    visited_enc: &EncodedExpert,
    unvisited_enc: &EncodedExpert,
    lambdas: Lambdas,
    index: &VisitedIndex,
    u: usize,
    i: usize,
) -> f64 {
    if index.is_visited(u, i) {
        visited_enc.score_unchecked(lambdas.visited, u, i)
    } else {
        unvisited_enc.score_unchecked(lambdas.unvisited, u, i)
    }
}

/// A scorer over two encoded experts.
#[derive(Debug, Clone)]
pub struct GatedModel<'a> {
    pub visited: &'a EncodedExpert,
    pub unvisited: &'a EncodedExpert,
    pub lambdas: Lambdas,
    pub index: &'a VisitedIndex,
    pub gate: Gate,
}

impl GatedModel<'_> {
    pub fn score(&self, u: usize, i: usize) -> f64 {
        match self.gate {
            Gate::Hard => gated_score(self.visited, self.unvisited, self.lambdas, self.index, u, i),
            Gate::Average => {
                0.5 * (self.visited.score_unchecked(self.lambdas.visited, u, i)
                    + self.unvisited.score_unchecked(self.lambdas.unvisited, u, i))
            }
        }
    }
}

impl Scorer for GatedModel<'_> {
    fn num_items(&self) -> usize {
        self.visited.global.num_items()
    }

    fn scores(&self, u: usize) -> Vec<f64> {
        (0..self.num_items()).map(|i| self.score(u, i)).collect()
    }

    fn typed_scores(&self, u: usize, kind: ItemKind) -> Vec<f64> {
        match kind {
            ItemKind::Visited => self.visited.score_all(self.lambdas.visited, u),
            ItemKind::Unvisited => self.unvisited.score_all(self.lambdas.unvisited, u),
        }
    }
}
